"""Rule-based queue policy driven by a predictive model of tenant reactions.

Each dispatch interval the queues observe how tenants reacted to the last
bulletin, update per-(model, queue) action frequencies, and move their
service rates one lattice step towards higher expected utility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .impatience import BehaviorParams
from .optimizer import ObjectiveWeights, RateBounds, is_feasible, objective_terms


class ModelKind(str, Enum):
    FSD = "FSD"
    ICD = "ICD"


class Action(int, Enum):
    STAY = 0
    RENEGE = 1
    JOCKEY = 2


QUEUES = (0, 1)


@dataclass(frozen=True)
class ReactionObservation:
    kind: ModelKind
    queue: int
    action: Action
    queue_length: int = 0
    staleness_age: float = 0.0

    def __post_init__(self):
        if self.queue not in QUEUES:
            raise ValueError(f"queue must be 0 or 1, got {self.queue}")
        if self.staleness_age < 0:
            raise ValueError("staleness age must be nonnegative")


@dataclass
class PredictiveModel:
    """Exponentially weighted action frequencies per (model kind, queue)."""

    alpha: float = 0.2
    freqs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        for kind in ModelKind:
            for q in QUEUES:
                self.freqs.setdefault((kind, q), np.full(3, 1.0 / 3.0))

    def observe(self, obs: ReactionObservation) -> "PredictiveModel":
        cell = self.freqs[(ModelKind(obs.kind), obs.queue)]
        onehot = np.zeros(3)
        onehot[int(obs.action)] = 1.0
        cell *= 1.0 - self.alpha
        cell += self.alpha * onehot
        cell /= cell.sum()
        return self

    def probabilities(self, kind: ModelKind, queue: int) -> tuple[float, float, float]:
        stay, renege, jockey = self.freqs[(ModelKind(kind), queue)]
        return float(stay), float(renege), float(jockey)


def observe(model: PredictiveModel, obs: ReactionObservation) -> PredictiveModel:
    return model.observe(obs)


def action_probabilities(model: PredictiveModel, kind: ModelKind, queue: int):
    """``(stay, renege, jockey)`` probabilities predicted for one cell."""
    return model.probabilities(kind, queue)


def _predicted(model: PredictiveModel, queue: int, kind: ModelKind | None):
    if kind is not None:
        return model.probabilities(kind, queue)
    cells = np.array([model.probabilities(k, queue) for k in ModelKind])
    return tuple(float(v) for v in cells.mean(axis=0))


@dataclass
class PolicyState:
    mu_i: float
    mu_j: float
    step: float = 0.5
    bounds: RateBounds = RateBounds()
    weights: ObjectiveWeights = ObjectiveWeights()


def expected_utility(
    state: PolicyState,
    model: PredictiveModel,
    lam_i: float,
    lam_j: float,
    bp: BehaviorParams,
    kind: ModelKind | None = None,
    rates: tuple[float, float] | None = None,
) -> float:
    """Negated objective with impatience terms weighted by predicted reactions.

    ``kind=None`` averages the predictions over both bulletin kinds.
    ``rates`` overrides the state's current rates.
    """
    mu_i, mu_j = rates if rates is not None else (state.mu_i, state.mu_j)
    terms = objective_terms(mu_i, mu_j, lam_i, lam_j, bp)
    _, ren_i, jock_i = _predicted(model, 0, kind)
    _, ren_j, jock_j = _predicted(model, 1, kind)
    w = state.weights
    cost = (
        w.tau * (terms["delay_i"] + terms["delay_j"])
        + w.phi * (ren_i * terms["renege_i"] + ren_j * terms["renege_j"])
        + w.psi * (jock_i * terms["jockey_i"] + jock_j * terms["jockey_j"])
    )
    return -cost


def neighbours(state: PolicyState, lam_i: float, lam_j: float) -> list[tuple[float, float]]:
    """Feasible lattice moves, current rates first, then lexicographic order."""
    b = state.bounds
    out = []
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            mi = round(min(max(state.mu_i + di * state.step, b.mu_min), b.mu_max), 12)
            mj = round(min(max(state.mu_j + dj * state.step, b.mu_min), b.mu_max), 12)
            if is_feasible(mi, lam_i, b) and is_feasible(mj, lam_j, b):
                out.append((mi, mj))
    current = (state.mu_i, state.mu_j)
    rest = sorted(set(out) - {current})
    return ([current] if current in out else []) + rest


def recalibrate(
    state: PolicyState,
    model: PredictiveModel,
    lam_i: float,
    lam_j: float,
    bp: BehaviorParams,
    kind: ModelKind | None = None,
) -> tuple[float, float]:
    """Best of the nine ``{-step, 0, +step}`` moves; stays put on ties."""
    best, best_u = (state.mu_i, state.mu_j), None
    for cand in neighbours(state, lam_i, lam_j):
        u = expected_utility(state, model, lam_i, lam_j, bp, kind, rates=cand)
        if best_u is None or u > best_u:
            best, best_u = cand, u
    return best
