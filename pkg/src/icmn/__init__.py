"""Delivery ratio of epidemic routing in Markovian temporal graphs."""

from .analytic import (
    DeliveryResult,
    EpidemicStateSpace,
    TransitionMatrix,
    build_bound_matrices,
    build_dynamic_matrix,
    build_static_matrix,
    delivery_probability,
    p_cont,
    p_succ,
    sweep,
)
from .model import LinkModel, ModelError, ScenarioParams, expected_durations, link_model, mean_degree
from .simulate import TemporalGraph, epidemic_run, generate_graph, mc_delivery_ratio

__version__ = "0.1.0"
