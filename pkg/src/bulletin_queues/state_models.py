"""Markov information models dispatched to tenants.

Two models live here: the stationary law of a queue's service-rate chain
(compared across queues by first-order stochastic dominance) and the
inter-change-time model of queue-length dynamics in an M/M/1 queue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import IncompatibleGrids, NonpositiveRate, UnstableQueue

PROB_TOL = 1e-12
TAIL_TOL = 1e-9


@dataclass(frozen=True)
class ServiceRateChain:
    """Stationary distribution over ``K`` ordered service-rate levels."""

    levels: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "probs", probs)
        if len(levels) == 0 or len(levels) != len(probs):
            raise ValueError("levels and probs must be nonempty and of equal length")
        if not all(math.isfinite(v) and v > 0 for v in levels):
            raise ValueError("levels must be finite and positive")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("levels must be strictly increasing")
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise ValueError("probs must be nonnegative")
        if abs(math.fsum(probs) - 1.0) > PROB_TOL:
            raise ValueError(f"probs sum to {math.fsum(probs)!r}, expected 1")

    @classmethod
    def centered(
        cls,
        mu: float,
        spread: float = 0.2,
        probs: Sequence[float] = (0.25, 0.5, 0.25),
    ) -> "ServiceRateChain":
        """Three-level chain ``{(1-spread)mu, mu, (1+spread)mu}``."""
        if mu <= 0:
            raise NonpositiveRate(f"mu must be positive, got {mu}")
        if not 0 < spread < 1:
            raise ValueError("spread must lie in (0, 1)")
        return cls(((1 - spread) * mu, mu, (1 + spread) * mu), tuple(probs))

    @property
    def k(self) -> int:
        return len(self.levels)


class Dominance(str, Enum):
    X_DOMINATES = "XDominates"
    Y_DOMINATES = "YDominates"
    NO_DOMINANCE = "NoDominance"


def effective_rate(chain: ServiceRateChain) -> float:
    """Stationary-probability-weighted mean service rate of the chain."""
    value = math.fsum(p * v for p, v in zip(chain.probs, chain.levels))
    # fsum rounding can leave the mean a hair outside the support
    return min(max(value, chain.levels[0]), chain.levels[-1])


def cdf(chain: ServiceRateChain) -> list[float]:
    """Cumulative probabilities ``F(mu_k)`` at each level."""
    out = []
    acc = 0.0
    for p in chain.probs:
        acc += p
        out.append(acc)
    return out


def _step_cdf_on(chain: ServiceRateChain, grid: Sequence[float]) -> np.ndarray:
    levels = np.asarray(chain.levels)
    cum = np.concatenate(([0.0], np.cumsum(chain.probs)))
    idx = np.searchsorted(levels, np.asarray(grid), side="right")
    return cum[idx]


def fsd_compare(
    x: ServiceRateChain, y: ServiceRateChain, *, align: bool = True
) -> Dominance:
    """First-order stochastic dominance verdict between two rate chains.

    ``X`` dominates when ``F_X <= F_Y`` at every level and strictly below at
    one or more. Chains on different level sets are compared as step CDFs on
    the union grid; pass ``align=False`` to demand identical grids instead.
    """
    if x.levels == y.levels:
        grid = list(x.levels)
    elif not align:
        raise IncompatibleGrids("chains are defined over different level grids")
    else:
        grid = sorted(set(x.levels) | set(y.levels))
    fx = _step_cdf_on(x, grid)
    fy = _step_cdf_on(y, grid)
    x_le = bool(np.all(fx <= fy + PROB_TOL))
    y_le = bool(np.all(fy <= fx + PROB_TOL))
    if x_le and np.any(fx < fy - PROB_TOL):
        return Dominance.X_DOMINATES
    if y_le and np.any(fy < fx - PROB_TOL):
        return Dominance.Y_DOMINATES
    return Dominance.NO_DOMINANCE


def icd_event_rate(lam: float) -> float:
    """Long-run rate of queue-length changes in a stable M/M/1 queue (``2 lambda``)."""
    if lam <= 0:
        raise NonpositiveRate(f"lambda must be positive, got {lam}")
    return 2.0 * lam


def icd_time(lam: float) -> float:
    """Expected time between successive queue-length changes."""
    return 1.0 / icd_event_rate(lam)


@dataclass(frozen=True)
class QueueParams:
    lam: float
    mu: float
    mu_min: float = 0.5
    mu_max: float = 15.0

    def __post_init__(self):
        if self.mu_min <= 0:
            raise NonpositiveRate("mu_min must be positive")
        if not self.mu_min <= self.mu <= self.mu_max:
            raise ValueError(
                f"mu={self.mu} outside bounds [{self.mu_min}, {self.mu_max}]"
            )
        if not 0 < self.lam < self.mu:
            raise UnstableQueue(f"need 0 < lambda < mu, got lambda={self.lam}, mu={self.mu}")

    @property
    def rho(self) -> float:
        return self.lam / self.mu


@dataclass(frozen=True)
class StationaryLengthDist:
    """Geometric stationary queue-length law of an M/M/1 queue."""

    rho: float

    def __post_init__(self):
        if not 0 <= self.rho < 1:
            raise UnstableQueue(f"utilization must lie in [0, 1), got {self.rho}")

    def pmf(self, n: int) -> float:
        if n < 0:
            return 0.0
        return (1.0 - self.rho) * self.rho**n

    def tail(self, n: int) -> float:
        """Mass strictly above ``n``, i.e. ``rho**(n+1)``."""
        return self.rho ** (n + 1)

    def truncation(self, tol: float = TAIL_TOL) -> int:
        """Smallest ``N`` whose tail mass ``rho**(N+1)`` falls below ``tol``."""
        if self.rho == 0.0:
            return 0
        n = max(0, math.ceil(math.log(tol) / math.log(self.rho)) - 1)
        while self.tail(n) >= tol:
            n += 1
        while n > 0 and self.tail(n - 1) < tol:
            n -= 1
        return n

    def probabilities(self, tol: float = TAIL_TOL) -> np.ndarray:
        """``pi_0 .. pi_N`` up to the truncation point."""
        n = np.arange(self.truncation(tol) + 1)
        return (1.0 - self.rho) * self.rho**n


def stationary_length_dist(params: QueueParams | tuple[float, float]) -> StationaryLengthDist:
    if isinstance(params, QueueParams):
        lam, mu = params.lam, params.mu
    else:
        lam, mu = params
    if mu <= 0:
        raise NonpositiveRate(f"mu must be positive, got {mu}")
    if lam >= mu:
        raise UnstableQueue(f"lambda={lam} >= mu={mu}")
    return StationaryLengthDist(lam / mu)
