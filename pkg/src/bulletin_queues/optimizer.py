"""Service-rate optimisation for the two-queue impatience objective.

The objective adds weighted delay, reneging and jockeying terms for
inter-change-time bulletins. Optima are found by exhaustive search on a
rate lattice; the winner is then checked against the KKT conditions and a
finite-difference Hessian.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoFeasiblePoint, StepUnderflow, UnstableQueue
from .impatience import BehaviorParams, renege_rate_icd, sigmoid
from .state_models import stationary_length_dist

SLACK_TOL = 1e-9
PSD_TOL = 1e-6
# constraint order per queue: mu_min - mu <= 0, mu - mu_max <= 0, lam - mu <= 0
CONSTRAINT_NAMES = ("lower", "upper", "stability")
_CONSTRAINT_GRAD = np.array([-1.0, 1.0, -1.0])


@dataclass(frozen=True)
class ObjectiveWeights:
    tau: float = 1.0
    phi: float = 1.0
    psi: float = 1.0

    def __post_init__(self):
        if min(self.tau, self.phi, self.psi) < 0:
            raise ValueError("weights must be nonnegative")
        if max(self.tau, self.phi, self.psi) <= 0:
            raise ValueError("at least one weight must be positive")


@dataclass(frozen=True)
class RateBounds:
    mu_min: float = 0.5
    mu_max: float = 15.0

    def __post_init__(self):
        if not 0 < self.mu_min <= self.mu_max:
            raise ValueError("need 0 < mu_min <= mu_max")


@dataclass(frozen=True)
class GridSpec:
    lo: float = 0.5
    hi: float = 15.0
    step: float = 0.5

    def values(self) -> np.ndarray:
        if not (self.step > 0 and self.hi >= self.lo):
            raise ValueError("empty grid")
        n = int(math.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return np.round(self.lo + self.step * np.arange(n), 12)


def _check_stable(mu: float, lam: float) -> None:
    if not mu > lam:
        raise UnstableQueue(f"need mu > lambda, got mu={mu}, lambda={lam}")


def delay(mu: float, lam: float) -> float:
    """Mean queueing delay ``rho / (mu - lam)`` of an M/M/1 queue."""
    _check_stable(mu, lam)
    return (lam / mu) / (mu - lam)


def delay_gradient(mu: float, lam: float) -> float:
    _check_stable(mu, lam)
    return -lam * (2.0 * mu - lam) / (mu**2 * (mu - lam) ** 2)


def objective_terms(
    mu_i: float, mu_j: float, lam_i: float, lam_j: float, bp: BehaviorParams
) -> dict[str, float]:
    """Unweighted delay, renege and jockey components, split per queue."""
    _check_stable(mu_i, lam_i)
    _check_stable(mu_j, lam_j)
    damp = bp.damping
    return {
        "delay_i": delay(mu_i, lam_i),
        "delay_j": delay(mu_j, lam_j),
        "renege_i": lam_i * renege_rate_icd(lam_i, mu_i, bp) if lam_i > 0 else 0.0,
        "renege_j": lam_j * renege_rate_icd(lam_j, mu_j, bp) if lam_j > 0 else 0.0,
        "jockey_i": lam_i * sigmoid(bp.d * (2 * lam_i * damp - 2 * lam_j * damp)),
        "jockey_j": lam_j * sigmoid(bp.d * damp * ((mu_i - lam_i) - (mu_j - lam_j))),
    }


def objective(
    mu_i: float,
    mu_j: float,
    lam_i: float,
    lam_j: float,
    bp: BehaviorParams,
    w: ObjectiveWeights = ObjectiveWeights(),
) -> float:
    t = objective_terms(mu_i, mu_j, lam_i, lam_j, bp)
    return (
        w.tau * (t["delay_i"] + t["delay_j"])
        + w.phi * (t["renege_i"] + t["renege_j"])
        + w.psi * (t["jockey_i"] + t["jockey_j"])
    )


@dataclass
class KKTPoint:
    """Candidate rate pair with its multipliers and KKT residuals.

    ``multipliers[q, m]`` is the multiplier of constraint ``m`` (lower,
    upper, stability) for queue ``q`` (0 = i, 1 = j).
    """

    mu_i: float
    mu_j: float
    lam_i: float
    lam_j: float
    bounds: RateBounds = RateBounds()
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros((2, 3)))
    stationarity_residuals: np.ndarray = field(default_factory=lambda: np.zeros(2))
    slackness_residuals: np.ndarray = field(default_factory=lambda: np.zeros((2, 3)))
    active: tuple[tuple[str, ...], tuple[str, ...]] = ((), ())

    @property
    def mus(self) -> tuple[float, float]:
        return (self.mu_i, self.mu_j)

    @property
    def lams(self) -> tuple[float, float]:
        return (self.lam_i, self.lam_j)

    def constraint_values(self) -> np.ndarray:
        """``g[q, m]`` for both queues; feasible iff all <= 0 (stability strictly)."""
        b = self.bounds
        return np.array(
            [[b.mu_min - mu, mu - b.mu_max, lam - mu] for mu, lam in zip(self.mus, self.lams)]
        )


def _phi_series(mu: float, lam: float, bp: BehaviorParams) -> float:
    eps = mu - lam
    dlt = bp.delta
    n_terms = stationary_length_dist((lam, mu)).truncation() if lam > 0 else 0
    total = 0.0
    x = eps * dlt
    for v in range(n_terms):
        if x == 0.0:
            term = 1.0 if v == 0 else 0.0
        else:
            term = math.exp(v * math.log(x) - x - math.lgamma(v + 1))
        total += (v / eps - dlt) * term
    return total


def objective_gradient(
    mu_i: float,
    mu_j: float,
    lam_i: float,
    lam_j: float,
    bp: BehaviorParams,
    w: ObjectiveWeights,
) -> np.ndarray:
    """Gradient of the objective in the closed form used by the stationarity test.

    The reneging part is the derivative of the Poisson tail series in the net
    rate with the series cut at the queue-length truncation point; the
    jockeying part uses ``sigma'(z) (lam_i + lam_j)`` with opposite signs.
    """
    _check_stable(mu_i, lam_i)
    _check_stable(mu_j, lam_j)
    damp = bp.damping
    z = bp.d * damp * ((mu_j - lam_j) - (mu_i - lam_i))
    s = sigmoid(z)
    jockey = w.psi * bp.d * damp * s * (1.0 - s) * (lam_i + lam_j)
    g_i = w.tau * delay_gradient(mu_i, lam_i) + w.phi * lam_i * _phi_series(mu_i, lam_i, bp) + jockey
    g_j = w.tau * delay_gradient(mu_j, lam_j) + w.phi * lam_j * _phi_series(mu_j, lam_j, bp) - jockey
    return np.array([g_i, g_j])


def stationarity_residuals(
    point: KKTPoint, bp: BehaviorParams, w: ObjectiveWeights
) -> np.ndarray:
    """Lagrangian gradient at ``point``; zero at an exact KKT point."""
    grad = objective_gradient(point.mu_i, point.mu_j, point.lam_i, point.lam_j, bp, w)
    return grad + point.multipliers @ _CONSTRAINT_GRAD


@dataclass
class SlacknessReport:
    passed: bool
    entries: list[dict]

    def failures(self) -> list[dict]:
        return [e for e in self.entries if not e["ok"]]


def check_slackness(point: KKTPoint, tol: float = SLACK_TOL) -> SlacknessReport:
    """Complementary slackness, dual and primal feasibility for both queues."""
    g = point.constraint_values()
    gam = np.asarray(point.multipliers, dtype=float)
    entries = []
    for q, name_q in enumerate(("i", "j")):
        for m, name in enumerate(CONSTRAINT_NAMES):
            product = gam[q, m] * g[q, m]
            if name == "stability":
                primal_ok = g[q, m] < 0
            else:
                primal_ok = g[q, m] <= tol
            dual_ok = gam[q, m] >= 0
            slack_ok = abs(product) <= tol
            entries.append(
                {
                    "queue": name_q,
                    "constraint": name,
                    "g": float(g[q, m]),
                    "gamma": float(gam[q, m]),
                    "product": float(product),
                    "primal_ok": bool(primal_ok),
                    "dual_ok": bool(dual_ok),
                    "slack_ok": bool(slack_ok),
                    "ok": bool(primal_ok and dual_ok and slack_ok),
                }
            )
    return SlacknessReport(all(e["ok"] for e in entries), entries)


def solve_multipliers(
    grad_q: float, g_q: np.ndarray, tol: float = SLACK_TOL
) -> tuple[np.ndarray, tuple[int, ...], float]:
    """Pick multipliers for one queue by trying every active-set combination.

    For each subset of the three constraints the multipliers are the
    least-squares solution of the scalar stationarity equation. Subsets whose
    solution is negative or violates slackness are discarded; among the rest
    the smallest residual wins, ties going to the smaller subset.
    """
    best = None
    for size in range(4):
        for subset in itertools.combinations(range(3), size):
            gam = np.zeros(3)
            if subset:
                a = _CONSTRAINT_GRAD[list(subset)].reshape(1, -1)
                sol, *_ = np.linalg.lstsq(a, np.array([-grad_q]), rcond=None)
                gam[list(subset)] = sol
            if np.any(gam < -tol) or np.any(np.abs(gam * g_q) > tol):
                continue
            gam = np.maximum(gam, 0.0)
            resid = abs(grad_q + gam @ _CONSTRAINT_GRAD)
            if best is None or resid < best[2] - 1e-15:
                best = (gam, subset, resid)
    return best


def kkt_point(
    mu_i: float,
    mu_j: float,
    lam_i: float,
    lam_j: float,
    bp: BehaviorParams,
    w: ObjectiveWeights,
    bounds: RateBounds = RateBounds(),
) -> KKTPoint:
    point = KKTPoint(mu_i, mu_j, lam_i, lam_j, bounds)
    grad = objective_gradient(mu_i, mu_j, lam_i, lam_j, bp, w)
    g = point.constraint_values()
    active = []
    for q in range(2):
        # a bound counts as attained when it is hit to within rounding
        g_q = np.where(np.abs(g[q]) <= SLACK_TOL, 0.0, g[q])
        gam, subset, _ = solve_multipliers(grad[q], g_q)
        point.multipliers[q] = gam
        active.append(tuple(CONSTRAINT_NAMES[m] for m in subset))
    point.active = (active[0], active[1])
    point.stationarity_residuals = stationarity_residuals(point, bp, w)
    point.slackness_residuals = point.multipliers * g
    return point


@dataclass
class HessianReport:
    psd: bool
    eigenvalues: np.ndarray
    matrix: np.ndarray


def hessian_psd_check(
    mu_i: float,
    mu_j: float,
    lam_i: float,
    lam_j: float,
    bp: BehaviorParams,
    w: ObjectiveWeights,
) -> HessianReport:
    """Central finite-difference Hessian of the objective and its PSD verdict."""
    h = np.array([1e-4 * max(1.0, mu_i), 1e-4 * max(1.0, mu_j)])
    if mu_i - h[0] <= lam_i or mu_j - h[1] <= lam_j:
        raise StepUnderflow(f"stencil at ({mu_i}, {mu_j}) crosses the stability boundary")

    def f(a, b):
        return objective(a, b, lam_i, lam_j, bp, w)

    f0 = f(mu_i, mu_j)
    hii = (f(mu_i + h[0], mu_j) - 2 * f0 + f(mu_i - h[0], mu_j)) / h[0] ** 2
    hjj = (f(mu_i, mu_j + h[1]) - 2 * f0 + f(mu_i, mu_j - h[1])) / h[1] ** 2
    hij = (
        f(mu_i + h[0], mu_j + h[1])
        - f(mu_i + h[0], mu_j - h[1])
        - f(mu_i - h[0], mu_j + h[1])
        + f(mu_i - h[0], mu_j - h[1])
    ) / (4 * h[0] * h[1])
    mat = np.array([[hii, hij], [hij, hjj]])
    eig = np.linalg.eigvalsh(mat)
    return HessianReport(bool(np.all(eig >= -PSD_TOL)), eig, mat)


@dataclass
class OptimizationResult:
    best: tuple[float, float, float]
    grid: np.ndarray
    landscape: np.ndarray
    feasible: np.ndarray
    kkt: KKTPoint
    slackness: SlacknessReport
    hessian: HessianReport | None

    def landscape_rows(self):
        for a, mu_i in enumerate(self.grid):
            for b, mu_j in enumerate(self.grid):
                yield float(mu_i), float(mu_j), float(self.landscape[a, b]), bool(self.feasible[a, b])


def is_feasible(mu: float, lam: float, bounds: RateBounds) -> bool:
    return bounds.mu_min <= mu <= bounds.mu_max and mu > lam


def optimize(
    grid: GridSpec,
    lam_i: float,
    lam_j: float,
    bp: BehaviorParams,
    w: ObjectiveWeights = ObjectiveWeights(),
    bounds: RateBounds = RateBounds(),
) -> OptimizationResult:
    """Exhaustive lattice search; ties go to the lexicographically smallest pair."""
    values = grid.values()
    n = len(values)
    land = np.full((n, n), np.nan)
    feas = np.zeros((n, n), dtype=bool)
    best = None
    for a, mu_i in enumerate(values):
        if not is_feasible(mu_i, lam_i, bounds):
            continue
        for b, mu_j in enumerate(values):
            if not is_feasible(mu_j, lam_j, bounds):
                continue
            val = objective(mu_i, mu_j, lam_i, lam_j, bp, w)
            land[a, b] = val
            feas[a, b] = True
            if best is None or val < best[2]:
                best = (float(mu_i), float(mu_j), val)
    if best is None:
        raise NoFeasiblePoint(
            f"no grid point satisfies the constraints (lambda_i={lam_i}, lambda_j={lam_j})"
        )
    point = kkt_point(best[0], best[1], lam_i, lam_j, bp, w, bounds)
    try:
        hess = hessian_psd_check(best[0], best[1], lam_i, lam_j, bp, w)
    except StepUnderflow:
        hess = None
    return OptimizationResult(best, values, land, feas, point, check_slackness(point), hess)
