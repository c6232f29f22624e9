"""Epidemic absorbing chain and delivery probabilities.

The epidemic is summarized by counts only. A transient state ``(i, j)``
holds ``i`` nodes infected for at least two steps and ``j`` nodes infected
during the last step; the destination is never counted. ``SUCC`` is the
absorbing state reached once the destination holds a copy. The initial
state (only the source infected) behaves exactly like ``(0, 1)``: the
source's links are at their stationary distribution on the first step.

Every matrix here is built by one routine parameterized by two per-link
infection probabilities:

``p_new``
    probability that a link from a just-infected node to a given
    susceptible node is usable during the next step;
``p_old``
    the same for a node infected at least two steps ago, whose links to
    susceptible nodes are known to be down now.

The dynamic matrix uses ``(pi_up, 1 - q_i)``. On a frozen snapshot no link
appears, hence the static matrix uses ``(pi_up, 0)``. The bound matrices
for packets larger than a link capacity substitute interval-level
probabilities.
"""

from __future__ import annotations

import csv
import functools
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.special import gammaln, xlog1py, xlogy

from .model import (
    LinkModel,
    ModelError,
    ScenarioParams,
    hops_for,
    link_model,
    transfer_steps_for,
)

SUCC = "Succ"

DYNAMIC = "dynamic"
STATIC = "static"
LOWER = "lower"
UPPER = "upper"


# -- binomial primitives -----------------------------------------------------

def binom_pmf(k, n, p):
    """Binomial pmf evaluated through log-gamma; broadcasts over arrays.

    Returns 0 wherever ``k < 0`` or ``k > n``. The endpoints ``p = 0`` and
    ``p = 1`` are exact.
    """
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    valid = (k >= 0) & (k <= n)
    ks = np.where(valid, k, 0.0)
    ns = np.where(valid, n, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logpmf = (
            gammaln(ns + 1.0)
            - gammaln(ks + 1.0)
            - gammaln(ns - ks + 1.0)
            + xlogy(ks, p)
            + xlog1py(ns - ks, -p)
        )
        out = np.where(valid, np.exp(logpmf), 0.0)
    return out[()] if out.ndim == 0 else out


def _spread(p: float, u: int) -> float:
    """Probability that at least one of ``u`` independent sources succeeds."""
    if u == 0:
        return 0.0
    return 1.0 - (1.0 - p) ** u


def p_cont(m: int, p: float, u: int, w: int) -> float:
    """Probability that exactly ``m`` of ``w`` nodes are contaminated by ``u``
    infectious nodes, each pair succeeding independently with probability ``p``.
    """
    if m < 0 or u < 0 or w < 0:
        raise ModelError(f"counts must be non-negative (m={m}, u={u}, w={w})")
    if not 0.0 <= p <= 1.0:
        raise ModelError(f"p must lie in [0, 1] (got {p})")
    return float(binom_pmf(m, w, _spread(p, u)))


def p_succ(i: int, j: int, m: LinkModel) -> float:
    """Probability that the destination is reached on the next step from ``(i, j)``."""
    if i < 0 or j < 0 or i + j < 1:
        raise ModelError(f"need i, j >= 0 and i + j >= 1 (got i={i}, j={j})")
    return 1.0 - m.pi_down**j * m.q_i**i


# -- state space ---------------------------------------------------------------

@dataclass(frozen=True)
class EpidemicStateSpace:
    n: int
    states: tuple
    index: Mapping

    @classmethod
    def for_nodes(cls, n: int) -> "EpidemicStateSpace":
        if n < 2:
            raise ModelError(f"n must be >= 2 (got {n})")
        states = [SUCC]
        for s in range(1, n):
            states.extend((i, s - i) for i in range(s + 1))
        return cls(n=n, states=tuple(states), index={st: k for k, st in enumerate(states)})

    def __len__(self) -> int:
        return len(self.states)

    @property
    def succ(self) -> int:
        return self.index[SUCC]

    @property
    def init(self) -> int:
        return self.index[(0, 1)]

    def initial_vector(self) -> np.ndarray:
        v = np.zeros(len(self.states))
        v[self.init] = 1.0
        return v


@functools.lru_cache(maxsize=None)
def state_space(n: int) -> EpidemicStateSpace:
    return EpidemicStateSpace.for_nodes(n)


# -- transition matrices ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    space: EpidemicStateSpace
    matrix: sparse.csr_matrix
    kind: str

    def row(self, state) -> dict:
        """Non-zero transitions out of ``state`` as ``{target_state: probability}``."""
        k = self.space.index[state]
        lo, hi = self.matrix.indptr[k], self.matrix.indptr[k + 1]
        cols = self.matrix.indices[lo:hi]
        vals = self.matrix.data[lo:hi]
        return {self.space.states[c]: float(v) for c, v in zip(cols, vals)}

    def entry(self, src, dst) -> float:
        return float(self.matrix[self.space.index[src], self.space.index[dst]])

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def step(self, v: np.ndarray) -> np.ndarray:
        """One row-vector product ``v @ M``."""
        return self.matrix.T @ v


def _build(n: int, p_new: float, p_old: float, kind: str) -> TransitionMatrix:
    space = state_space(n)
    rows, cols, vals = [space.succ], [space.succ], [1.0]
    for state in space.states:
        if state == SUCC:
            continue
        i, j = state
        src = space.index[state]
        s = i + j
        w = n - 1 - s
        # destination link draws are independent of the relay link draws
        succ = 1.0 - (1.0 - p_new) ** j * (1.0 - p_old) ** i
        # contaminations by the j fresh nodes, then by the i old ones among
        # whoever is left susceptible
        from_new = binom_pmf(np.arange(w + 1), w, _spread(p_new, j))
        mm = np.arange(w + 1)[:, None]
        jj = np.arange(w + 1)[None, :]
        from_old = binom_pmf(jj - mm, w - mm, _spread(p_old, i))
        spread = from_new @ from_old
        if succ > 0.0:
            rows.append(src)
            cols.append(space.succ)
            vals.append(succ)
        stay = 1.0 - succ
        for jp in range(w + 1):
            pr = stay * spread[jp]
            if pr > 0.0:
                rows.append(src)
                cols.append(space.index[(s, jp)])
                vals.append(pr)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(len(space), len(space)))
    return TransitionMatrix(space=space, matrix=mat, kind=kind)


@functools.lru_cache(maxsize=256)
def build_dynamic_matrix(n: int, m: LinkModel) -> TransitionMatrix:
    """One step on a freshly evolved topology (one hop per step)."""
    if n < 2:
        raise ModelError(f"n must be >= 2 (got {n})")
    return _build(n, m.pi_up, 1.0 - m.q_i, DYNAMIC)


@functools.lru_cache(maxsize=256)
def build_static_matrix(n: int, m: LinkModel) -> TransitionMatrix:
    """One extra hop on the snapshot already used this step."""
    if n < 2:
        raise ModelError(f"n must be >= 2 (got {n})")
    return _build(n, m.pi_up, 0.0, STATIC)


def bound_link_probabilities(m: LinkModel, a: int) -> tuple[tuple[float, float], tuple[float, float]]:
    """``((p_new, p_old) lower, (p_new, p_old) upper)`` for ``a``-step intervals.

    Only links lasting the whole ``a`` steps can carry a packet. The lower
    bound counts links usable from the first step of the interval, the upper
    bound any link that shows up during it.
    """
    keep = m.q_c ** (a - 1)
    lower = (m.pi_up * keep, (1.0 - m.q_i) * keep)
    upper = (
        (m.pi_up + m.pi_down * (1.0 - m.q_i ** (a - 1))) * keep,
        (1.0 - m.q_i**a) * keep,
    )
    return lower, upper


@functools.lru_cache(maxsize=256)
def _bound_matrices(n: int, m: LinkModel, a: int) -> tuple[TransitionMatrix, TransitionMatrix]:
    lower, upper = bound_link_probabilities(m, a)
    return _build(n, *lower, LOWER), _build(n, *upper, UPPER)


def build_bound_matrices(n: int, m: LinkModel, alpha: float) -> tuple[TransitionMatrix, TransitionMatrix]:
    """Interval-level ``(T_inf, T_sup)`` for packets larger than a link capacity."""
    if not alpha > 1:
        raise ModelError(f"bound matrices need alpha > 1 (got {alpha})")
    if n < 2:
        raise ModelError(f"n must be >= 2 (got {n})")
    return _bound_matrices(n, m, transfer_steps_for(alpha))


# -- delivery probability ----------------------------------------------------------

@dataclass(frozen=True)
class DeliveryResult:
    kind: str  # "exact" or "interval"
    value: float | None = None
    lower: float | None = None
    upper: float | None = None
    steps_used: int = 0

    def __post_init__(self):
        if self.kind == "exact":
            if self.value is None or not -1e-12 <= self.value <= 1 + 1e-12:
                raise ValueError(f"exact delivery probability out of range: {self.value}")
        elif self.kind == "interval":
            if not (-1e-12 <= self.lower <= self.upper + 1e-12 and self.upper <= 1 + 1e-12):
                raise ValueError(f"bad delivery interval ({self.lower}, {self.upper})")
        else:
            raise ValueError(f"unknown result kind {self.kind!r}")


def _absorbed(space: EpidemicStateSpace, v: np.ndarray) -> float:
    return float(min(1.0, max(0.0, v[space.succ])))


def _iterate(mats: Sequence[TransitionMatrix], steps: Sequence[int]) -> dict[int, float]:
    """Success mass after each requested number of rounds, where one round
    applies every matrix of ``mats`` in order."""
    space = mats[0].space
    v = space.initial_vector()
    wanted = sorted(set(steps))
    out = {}
    done = 0
    for k in wanted:
        while done < k:
            for t in mats:
                v = t.step(v)
            done += 1
        out[k] = _absorbed(space, v)
    return out


def delivery_curve(n: int, m: LinkModel, alpha: float, ds: Iterable[int]) -> dict[int, DeliveryResult]:
    """Delivery results for several delays, sharing one pass of products."""
    ds = [int(d) for d in ds]
    if any(d < 1 for d in ds):
        raise ModelError("d must be >= 1")
    if not alpha > 0:
        raise ModelError(f"alpha must be > 0 (got {alpha})")
    if alpha <= 1:
        h = hops_for(alpha)
        t = build_dynamic_matrix(n, m)
        mats = [t] + [build_static_matrix(n, m)] * (h - 1)
        vals = _iterate(mats, ds)
        return {d: DeliveryResult("exact", value=vals[d], steps_used=d) for d in ds}
    a = transfer_steps_for(alpha)
    t_inf, t_sup = build_bound_matrices(n, m, alpha)
    ks = {d: d // a for d in ds}
    lo = _iterate([t_inf], ks.values())
    hi = _iterate([t_sup], ks.values())
    return {
        d: DeliveryResult("interval", lower=lo[k], upper=hi[k], steps_used=k)
        for d, k in ks.items()
    }


def delivery_probability(params: ScenarioParams, m: LinkModel) -> DeliveryResult:
    """Probability that the destination holds a copy within ``params.d`` steps.

    Exact for ``alpha <= 1``. For ``alpha > 1`` the result is an interval
    over ``d // ceil(alpha)`` whole transfer intervals; leftover steps are
    not used, and a delay shorter than one interval gives ``(0, 0)``.
    """
    return delivery_curve(params.n, m, params.alpha, [params.d])[params.d]


# -- sweeps -------------------------------------------------------------------------

SWEEP_AXES = ("n", "r", "lambda", "alpha", "d")
SWEEP_HEADER = ("n", "r", "lambda", "alpha", "d", "kind", "value", "lower", "upper")


@dataclass(frozen=True)
class SweepRow:
    n: int
    r: float
    lam: float
    alpha: float
    d: int
    result: DeliveryResult | None = None
    error: str | None = None


def grid(**axes: Sequence) -> Iterator[dict]:
    """Cartesian product over the sweep axes, last axis (``d``) fastest.

    Keys are ``n, r, lambda, alpha, d``; ``lam`` is accepted for ``lambda``.
    """
    if "lam" in axes:
        axes["lambda"] = axes.pop("lam")
    missing = [k for k in SWEEP_AXES if k not in axes]
    if missing:
        raise ModelError(f"grid is missing axes: {', '.join(missing)}")
    values = [list(axes[k]) for k in SWEEP_AXES]
    for combo in itertools.product(*values):
        yield dict(zip(SWEEP_AXES, combo))


def sweep(points: Iterable[Mapping], model_builder=link_model) -> list[SweepRow]:
    """Evaluate every grid point, keeping input order.

    A point whose parameters are invalid yields a row with ``error`` set
    instead of aborting the sweep.
    """
    points = list(points)
    if not points:
        raise ModelError("empty sweep grid")
    # one pass over d per (n, r, lambda, alpha) group
    groups: dict[tuple, list[int]] = {}
    for p in points:
        key = (p["n"], p["r"], p["lambda"], p["alpha"])
        groups.setdefault(key, []).append(p["d"])
    solved: dict[tuple, dict | str] = {}
    for key, ds in groups.items():
        n, r, lam, alpha = key
        try:
            if int(n) != n or n < 2:
                raise ModelError(f"n must be an integer >= 2 (got {n})")
            if not alpha > 0:
                raise ModelError(f"alpha must be > 0 (got {alpha})")
            m = model_builder(r, lam)
            good = [d for d in ds if int(d) == d and d >= 1]
            solved[key] = delivery_curve(int(n), m, alpha, good) if good else {}
        except (ModelError, ValueError) as exc:
            solved[key] = str(exc)
    rows = []
    for p in points:
        key = (p["n"], p["r"], p["lambda"], p["alpha"])
        got = solved[key]
        base = dict(n=p["n"], r=p["r"], lam=p["lambda"], alpha=p["alpha"], d=p["d"])
        if isinstance(got, str):
            rows.append(SweepRow(**base, error=got))
        elif p["d"] not in got:
            rows.append(SweepRow(**base, error=f"d must be an integer >= 1 (got {p['d']})"))
        else:
            rows.append(SweepRow(**base, result=got[p["d"]]))
    return rows


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_sweep_csv(rows: Iterable[SweepRow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for row in rows:
        if row.error is not None:
            res = ("error", None, None, None)
        else:
            res = (row.result.kind, row.result.value, row.result.lower, row.result.upper)
        w.writerow([_fmt(x) for x in (row.n, row.r, row.lam, row.alpha, row.d, *res)])
