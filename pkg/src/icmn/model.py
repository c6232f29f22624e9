"""Per-link two-state Markov chain and scenario parameters.

Every link of the temporal graph is an independent chain over {up, down}.
``q_c`` is the probability that an up link stays up for one more step and
``q_i`` the probability that a down link stays down. The chain is usually
described by two friendlier numbers: ``r``, the mean number of steps a link
stays up, and ``lam``, the ratio of mean down-time to mean up-time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass


class ModelError(ValueError):
    """Raised when model or scenario parameters are out of their domain."""


class DegenerateLinkWarning(UserWarning):
    """A link state is left at every step (q_c = 0 or q_i = 0)."""


@dataclass(frozen=True)
class LinkModel:
    r: float
    lam: float
    q_c: float
    q_i: float
    pi_up: float
    pi_down: float

    @property
    def degenerate(self) -> bool:
        return self.q_c == 0.0 or self.q_i == 0.0


def link_model(r: float, lam: float) -> LinkModel:
    """Build the link chain from mean lifetime ``r`` and down/up ratio ``lam``.

    A link spends at least one step in each state, so ``r >= 1`` and
    ``lam >= 1/r``. On the boundary one of the states is left at every step;
    the chain is still usable and a :class:`DegenerateLinkWarning` is issued.
    """
    r = float(r)
    lam = float(lam)
    if not (math.isfinite(r) and math.isfinite(lam)):
        raise ModelError(f"r and lambda must be finite (got r={r}, lambda={lam})")
    if r < 1.0:
        raise ModelError(f"r must satisfy r >= 1 (got r={r})")
    if lam * r < 1.0:
        raise ModelError(f"lambda must satisfy lambda >= 1/r = {1.0 / r:g} (got lambda={lam})")
    q_c = 1.0 - 1.0 / r
    q_i = 1.0 - 1.0 / (lam * r)
    m = LinkModel(
        r=r,
        lam=lam,
        q_c=q_c,
        q_i=q_i,
        pi_up=1.0 / (1.0 + lam),
        pi_down=lam / (1.0 + lam),
    )
    if m.degenerate:
        warnings.warn(
            f"degenerate link chain (q_c={q_c:g}, q_i={q_i:g}): a state is left every step",
            DegenerateLinkWarning,
            stacklevel=2,
        )
    return m


def expected_durations(m: LinkModel, tau: float) -> tuple[float, float]:
    """Mean contact and inter-contact durations in seconds."""
    if tau <= 0:
        raise ModelError(f"tau must be > 0 (got {tau})")
    return m.r * tau, m.lam * m.r * tau


def mean_degree(m: LinkModel, n: int) -> float:
    if n < 2:
        raise ModelError(f"n must be >= 2 (got {n})")
    return (n - 1) / (1.0 + m.lam)


@dataclass(frozen=True)
class ScenarioParams:
    """Node count, step length (s), packet size in link capacities, delay in steps."""

    n: int
    tau: float
    alpha: float
    d: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ModelError(f"n must be an integer >= 2 (got {self.n})")
        if int(self.d) != self.d or self.d < 1:
            raise ModelError(f"d must be an integer >= 1 (got {self.d})")
        if not self.alpha > 0 or not math.isfinite(self.alpha):
            raise ModelError(f"alpha must be > 0 (got {self.alpha})")
        if not self.tau > 0:
            raise ModelError(f"tau must be > 0 (got {self.tau})")


def hops_for(alpha: float) -> int:
    """Hops a packet of size ``alpha <= 1`` can make within one step."""
    return int(math.floor(1.0 / alpha))


def transfer_steps_for(alpha: float) -> int:
    """Consecutive up steps needed to push a packet of size ``alpha`` over a link."""
    return max(1, int(math.ceil(alpha)))
