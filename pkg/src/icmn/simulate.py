"""Seeded Markovian temporal graphs and epidemic spreading on them.

Links are stored as a boolean array of shape ``(steps, n*(n-1)/2)`` over the
upper-triangular pair order of :func:`numpy.triu_indices`. The spreading
engine works on batches so Monte Carlo trials and trace replays share the
same code path as a single :func:`epidemic_run`.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import LinkModel, ModelError, hops_for, transfer_steps_for


@functools.lru_cache(maxsize=None)
def pair_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints ``(u, v)`` with ``u < v`` of every link, in storage order."""
    return np.triu_indices(n, 1)


def link_id(n: int, u: int, v: int) -> int:
    """Storage column of the undirected link ``{u, v}``."""
    if u == v:
        raise ValueError("self-loops have no link")
    if u > v:
        u, v = v, u
    return u * n - u * (u + 1) // 2 + (v - u - 1)


@dataclass(frozen=True, eq=False)
class TemporalGraph:
    n: int
    links: np.ndarray  # (steps, n*(n-1)/2) bool
    tau: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise ModelError(f"a temporal graph needs n >= 2 (got {self.n})")
        links = np.asarray(self.links, dtype=bool)
        if links.ndim != 2 or links.shape[1] != self.n * (self.n - 1) // 2:
            raise ValueError(f"links must have shape (steps, {self.n * (self.n - 1) // 2})")
        if links.shape[0] < 1:
            raise ValueError("a temporal graph needs at least one step")
        object.__setattr__(self, "links", links)

    @classmethod
    def from_edges(cls, n: int, edges, tau: float = 1.0) -> "TemporalGraph":
        """Build from one iterable of ``(u, v)`` pairs per step."""
        edges = list(edges)
        links = np.zeros((len(edges), n * (n - 1) // 2), dtype=bool)
        for k, step in enumerate(edges):
            for u, v in step:
                if not (0 <= u < n and 0 <= v < n) or u == v:
                    raise ValueError(f"bad edge ({u}, {v}) at step {k}")
                links[k, link_id(n, u, v)] = True
        return cls(n=n, links=links, tau=tau)

    @property
    def steps(self) -> int:
        return self.links.shape[0]

    def edges(self, k: int) -> set[tuple[int, int]]:
        iu, ju = pair_index(self.n)
        on = np.flatnonzero(self.links[k])
        return {(int(iu[c]), int(ju[c])) for c in on}

    def window(self, start: int, length: int) -> "TemporalGraph":
        if start < 0 or length < 1 or start + length > self.steps:
            raise ValueError(f"window [{start}, {start + length}) outside 0..{self.steps}")
        return TemporalGraph(n=self.n, links=self.links[start:start + length], tau=self.tau)

    def active_nodes(self) -> np.ndarray:
        """Nodes that have at least one link up at some step."""
        iu, ju = pair_index(self.n)
        used = self.links.any(axis=0)
        mask = np.zeros(self.n, dtype=bool)
        mask[iu[used]] = True
        mask[ju[used]] = True
        return np.flatnonzero(mask)


# -- generation ------------------------------------------------------------------

def trial_seed(seed: int, trial: int) -> np.random.SeedSequence:
    """Private stream of trial number ``trial`` under master ``seed``."""
    return np.random.SeedSequence(seed, spawn_key=(trial,))


def _evolve(uniforms: np.ndarray, m: LinkModel) -> np.ndarray:
    # uniforms: (..., steps, links); first step from the stationary law
    state = np.empty(uniforms.shape, dtype=bool)
    state[..., 0, :] = uniforms[..., 0, :] < m.pi_up
    for t in range(1, uniforms.shape[-2]):
        prev = state[..., t - 1, :]
        u = uniforms[..., t, :]
        state[..., t, :] = np.where(prev, u < m.q_c, u >= m.q_i)
    return state


def generate_graph(n: int, m: LinkModel, steps: int, seed, tau: float = 1.0) -> TemporalGraph:
    """Sample a Markovian temporal graph; ``seed`` is an int or a SeedSequence."""
    if n < 2:
        raise ModelError(f"n must be >= 2 (got {n})")
    if steps < 1:
        raise ModelError(f"steps must be >= 1 (got {steps})")
    rng = np.random.default_rng(seed)
    u = rng.random((steps, n * (n - 1) // 2))
    return TemporalGraph(n=n, links=_evolve(u, m), tau=tau)


# -- spreading --------------------------------------------------------------------

@dataclass(frozen=True)
class EpidemicRun:
    source: int
    destination: int
    delivered: bool
    delivery_step: int | None
    infected_at: tuple = field(repr=False)


def _adjacency(n: int, links_k: np.ndarray) -> np.ndarray:
    iu, ju = pair_index(n)
    adj = np.zeros(links_k.shape[:-1] + (n, n), dtype=bool)
    adj[..., iu, ju] = links_k
    adj[..., ju, iu] = links_k
    return adj


def spread_batch(links: np.ndarray, n: int, sources, destinations, alpha: float, d: int):
    """Run many epidemics at once.

    ``links`` is either ``(steps, L)``, shared by every run, or
    ``(B, steps, L)`` with one graph per run. Returns
    ``(delivery_step, infected_at)``: ``delivery_step`` is 0 for runs that
    never reached their destination and ``infected_at`` holds -1 for nodes
    never infected.

    Packets of size ``alpha <= 1`` cross ``floor(1/alpha)`` hops per step,
    all on that step's snapshot, with relays keeping a copy. A larger packet
    needs a link to stay up ``ceil(alpha)`` consecutive steps while its
    sender already holds the packet; a broken transfer starts over.
    """
    sources = np.asarray(sources, dtype=np.intp)
    destinations = np.asarray(destinations, dtype=np.intp)
    b = len(sources)
    shared = links.ndim == 2
    if links.shape[-2] < d:
        raise ValueError(f"graph has {links.shape[-2]} steps, fewer than d={d}")
    if np.any(sources == destinations):
        raise ValueError("source and destination must differ")
    rows = np.arange(b)
    infected = np.zeros((b, n), dtype=bool)
    infected[rows, sources] = True
    infected_at = np.full((b, n), -1, dtype=np.int64)
    infected_at[rows, sources] = 0
    delivery = np.zeros(b, dtype=np.int64)
    active = np.ones(b, dtype=bool)
    a = transfer_steps_for(alpha) if alpha > 1 else 1
    h = hops_for(alpha) if alpha <= 1 else 1
    progress = np.zeros((b, n, n), dtype=np.int32) if a > 1 else None

    for k in range(1, d + 1):
        adj = _adjacency(n, links[k - 1] if shared else links[:, k - 1])
        if shared:
            adj = adj[None]
        if a == 1:
            cur = infected.copy()
            for _ in range(h):
                # the destination never relays
                senders = cur.copy()
                senders[rows, destinations] = False
                senders &= ~cur[rows, destinations][:, None]
                reach = (senders[:, :, None] & adj).any(axis=1)
                fresh = reach & ~cur
                if not fresh.any():
                    break
                cur |= fresh
            newly = cur & ~infected
        else:
            eligible = infected[:, :, None] & adj & ~infected[:, None, :]
            progress = np.where(eligible, progress + 1, 0)
            newly = (progress >= a).any(axis=1) & ~infected
        newly &= active[:, None]
        infected |= newly
        infected_at[newly] = k
        hit = newly[rows, destinations]
        delivery[hit] = k
        active &= ~hit
        if not active.any():
            break
    return delivery, infected_at


def epidemic_run(g: TemporalGraph, source: int, destination: int, alpha: float, d: int) -> EpidemicRun:
    """Flood one packet from ``source`` over the first ``d`` steps of ``g``."""
    if source == destination:
        raise ValueError("source and destination must differ")
    if not (0 <= source < g.n and 0 <= destination < g.n):
        raise ValueError(f"nodes must lie in 0..{g.n - 1}")
    if d < 1 or d > g.steps:
        raise ValueError(f"need 1 <= d <= {g.steps} (got d={d})")
    if not alpha > 0:
        raise ModelError(f"alpha must be > 0 (got {alpha})")
    delivery, infected_at = spread_batch(g.links, g.n, [source], [destination], alpha, d)
    step = int(delivery[0])
    return EpidemicRun(
        source=source,
        destination=destination,
        delivered=step > 0,
        delivery_step=step if step > 0 else None,
        infected_at=tuple(int(x) if x >= 0 else None for x in infected_at[0]),
    )


# -- Monte Carlo ------------------------------------------------------------------

@dataclass(frozen=True)
class McEstimate:
    trials: int
    successes: int
    ratio: float
    half_width_95: float

    @classmethod
    def from_counts(cls, successes: int, trials: int) -> "McEstimate":
        ratio = successes / trials
        return cls(
            trials=trials,
            successes=successes,
            ratio=ratio,
            half_width_95=1.96 * math.sqrt(ratio * (1.0 - ratio) / trials),
        )


BLOCK = 2048


def mc_delivery_ratio(n: int, m: LinkModel, alpha: float, d: int, trials: int, seed: int) -> McEstimate:
    """Estimate the delivery ratio from node 0 to node 1 by simulation.

    Trial ``t`` runs on ``generate_graph(n, m, d, trial_seed(seed, t))``, so
    any single trial can be reproduced on its own.
    """
    if trials < 1:
        raise ModelError(f"trials must be >= 1 (got {trials})")
    if n < 2 or d < 1 or not alpha > 0:
        raise ModelError(f"invalid scenario n={n}, d={d}, alpha={alpha}")
    n_links = n * (n - 1) // 2
    successes = 0
    for start in range(0, trials, BLOCK):
        stop = min(trials, start + BLOCK)
        u = np.stack([
            np.random.default_rng(trial_seed(seed, t)).random((d, n_links))
            for t in range(start, stop)
        ])
        links = _evolve(u, m)
        size = stop - start
        delivery, _ = spread_batch(links, n, np.zeros(size, int), np.ones(size, int), alpha, d)
        successes += int(np.count_nonzero(delivery))
    return McEstimate.from_counts(successes, trials)
