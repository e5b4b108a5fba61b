"""Reneging and jockeying probabilities and rates under stale bulletins.

Positions ``ell`` count the requests ahead of a tenant (0 = head of line).
Remaining waits are Erlang in the position; staleness of a bulletin
dispatched every ``r`` seconds enters through ``Delta = t_local - eta * r``
(clamped at zero) and through ``exp(-eta * r)`` damping of the sigmoid
arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gammainc, gammaln

from .errors import NonpositiveRate, QuadratureFailure, UnstableQueue
from .state_models import StationaryLengthDist, stationary_length_dist

QUAD_ABS_TOL = 1e-9


@dataclass(frozen=True)
class BehaviorParams:
    """Tenant behaviour knobs.

    Attributes
    ----------
    t_local : float
        Deterministic local-processing time a reneging tenant falls back on (s).
    d : float
        Sigmoid steepness of the jockeying decision.
    eta : float
        Staleness sensitivity in [0, 1].
    r : float
        Bulletin dispatch interval (s).
    """

    t_local: float = 2.0
    d: float = 1.0
    eta: float = 0.2
    r: float = 3.0

    def __post_init__(self):
        if not self.t_local > 0:
            raise ValueError("t_local must be positive")
        if not self.d > 0:
            raise ValueError("d must be positive")
        if not 0 <= self.eta <= 1:
            raise ValueError("eta must lie in [0, 1]")
        if not self.r > 0:
            raise ValueError("r must be positive")

    @property
    def delta(self) -> float:
        """Effective patience budget ``max(0, t_local - eta*r)``."""
        return max(0.0, self.t_local - self.eta * self.r)

    @property
    def damping(self) -> float:
        return math.exp(-self.eta * self.r)


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _poisson_terms(n: int, x: float) -> np.ndarray:
    """``x**v e**-x / v!`` for ``v = 0 .. n-1``."""
    if n <= 0:
        return np.zeros(0)
    if x == 0.0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    v = np.arange(n)
    return np.exp(v * math.log(x) - x - gammaln(v + 1))


def erlang_tail(ell: int, x: float) -> float:
    """``P(Erlang(ell, 1) > x)`` as the truncated Poisson sum; 0 for ``ell == 0``."""
    if ell < 0:
        raise ValueError("position must be nonnegative")
    if x < 0:
        raise ValueError("x must be nonnegative")
    return min(1.0, math.fsum(_poisson_terms(ell, x)))


def _check_rate(name: str, value: float) -> None:
    if not value > 0:
        raise NonpositiveRate(f"{name} must be positive, got {value}")


def expected_remaining(ell: int, mu: float) -> float:
    _check_rate("mu", mu)
    if ell < 0:
        raise ValueError("position must be nonnegative")
    return ell / mu


def erlang_wait_cdf(ell: int, nu: float, t: float) -> float:
    """CDF at ``t`` of the remaining wait for a tenant with ``ell`` requests ahead."""
    _check_rate("nu", nu)
    if t < 0:
        return 0.0
    if ell == 0:
        return 1.0
    # regularised lower incomplete gamma: no cancellation where the CDF is tiny
    return float(gammainc(ell, nu * t))


def _tail_by_position(n_max: int, x: float) -> np.ndarray:
    """Erlang tails ``P(W > x | ell)`` for ``ell = 0 .. n_max``."""
    terms = _poisson_terms(n_max, x)
    return np.minimum(1.0, np.concatenate(([0.0], np.cumsum(terms))))


def mixture_wait_cdf(dist: StationaryLengthDist, nu: float, t: float) -> float:
    """Stationary mixture of Erlang wait CDFs over queue lengths."""
    _check_rate("nu", nu)
    if t < 0:
        return 0.0
    pi = dist.probabilities()
    tails = _tail_by_position(len(pi) - 1, nu * t)
    return float(np.clip(np.dot(pi, 1.0 - tails), 0.0, 1.0))


def _require_stable(lam: float, mu: float) -> None:
    _check_rate("mu", mu)
    if not mu > lam:
        raise UnstableQueue(f"need mu > lambda, got mu={mu}, lambda={lam}")


def renege_probability(ell: int, mu: float, lam: float, bp: BehaviorParams) -> float:
    """Probability that the remaining wait at position ``ell`` exceeds ``Delta``.

    The wait law uses the net drain rate ``mu - lam``.
    """
    _require_stable(lam, mu)
    return erlang_tail(ell, (mu - lam) * bp.delta)


def _renege_rate(lam: float, mu: float, bp: BehaviorParams) -> float:
    _require_stable(lam, mu)
    if lam <= 0:
        return 0.0
    pi = stationary_length_dist((lam, mu)).probabilities()
    tails = _tail_by_position(len(pi) - 1, (mu - lam) * bp.delta)
    return lam * float(np.dot(pi, tails))


def renege_rate_fsd(lam: float, mu: float, bp: BehaviorParams) -> float:
    """Arrival-rate-weighted stationary renege probability (FSD bulletins)."""
    return _renege_rate(lam, mu, bp)


def renege_rate_icd(lam: float, mu: float, bp: BehaviorParams) -> float:
    """Same law as :func:`renege_rate_fsd`; the ICD gate is applied by the caller."""
    return _renege_rate(lam, mu, bp)


def jockey_probability_icd(lam_i: float, lam_j: float, bp: BehaviorParams) -> float:
    """Probability of switching ``i -> j`` after an inter-change-time bulletin."""
    _check_rate("lambda_i", lam_i)
    _check_rate("lambda_j", lam_j)
    return sigmoid(2.0 * bp.d * bp.damping * (lam_i - lam_j))


def jockey_rate_icd(lam_i: float, lam_j: float, bp: BehaviorParams) -> float:
    return lam_i * jockey_probability_icd(lam_i, lam_j, bp) + lam_j * jockey_probability_icd(
        lam_j, lam_i, bp
    )


def _erlang_pdf(k: int, rate: float, u: float) -> float:
    if u < 0:
        return 0.0
    if u == 0.0:
        return rate if k == 1 else 0.0
    return math.exp(k * math.log(rate) + (k - 1) * math.log(u) - rate * u - math.lgamma(k))


@lru_cache(maxsize=1 << 16)
def _fsd_numeric(ell: int, k: int, xi_i: float, xi_j: float, shift: float) -> float:
    def integrand(t: float) -> float:
        u = t - shift
        if u < 0:
            return 0.0
        return _erlang_pdf(k, xi_j, u) * erlang_tail(ell, xi_i * u)

    # split at the destination density's bulk so quad sees the peak
    knee = shift + (k + 4.0 * math.sqrt(k)) / xi_j + ell / xi_i
    head, err_head = integrate.quad(integrand, shift, knee, epsabs=1e-12, epsrel=1e-12, limit=200)
    rest, err_rest = integrate.quad(integrand, knee, math.inf, epsabs=1e-12, epsrel=1e-12, limit=200)
    err = err_head + err_rest
    if not err <= QUAD_ABS_TOL or not math.isfinite(head + rest):
        raise QuadratureFailure(
            f"quadrature error {err:.3g} exceeds {QUAD_ABS_TOL} "
            f"(ell={ell}, k={k}, xi_i={xi_i}, xi_j={xi_j}, shift={shift})"
        )
    return min(1.0, max(0.0, head + rest))


def jockey_probability_fsd_numeric(
    ell: int, k: int, xi_i: float, xi_j: float, shift: float = 0.0
) -> float:
    """``P(W_j < W_i)`` by adaptive quadrature.

    ``W_i ~ Erlang(ell, xi_i)`` is the wait at the current position and
    ``W_j ~ Erlang(k, xi_j)`` the wait after landing at position ``k`` of the
    other queue. Both laws are delayed by ``shift`` (the integrand is zero
    before it), so the delay cancels out of the comparison.
    """
    _check_rate("xi_i", xi_i)
    _check_rate("xi_j", xi_j)
    if ell < 1 or k < 1:
        raise ValueError("positions must be >= 1")
    if shift < 0:
        raise ValueError("shift must be nonnegative")
    return _fsd_numeric(int(ell), int(k), float(xi_i), float(xi_j), float(shift))


def jockey_probability_fsd_closed(ell: int, k: int, xi_i: float, xi_j: float) -> float:
    """Series form of the FSD jockey probability, evaluated exactly as written.

    The series is indexed by the origin position only, so ``k`` does not
    enter. It is not guaranteed to agree with the quadrature (or even to stay
    within [0, 1]); compare both via :func:`conformance_rows`.
    """
    _check_rate("xi_i", xi_i)
    _check_rate("xi_j", xi_j)
    if ell < 1:
        raise ValueError("ell must be >= 1")
    log_sum = math.log(xi_i + xi_j)
    log_xj = math.log(xi_j)
    logs = [
        ell * log_xj
        - (ell + m) * log_sum
        + math.lgamma(ell + m)
        - math.lgamma(ell)
        - math.lgamma(m + 1)
        for m in range(ell)
    ]
    top = max(logs)
    return math.exp(top) * math.fsum(math.exp(v - top) for v in logs)


def jockey_rate_fsd(lam_i: float, lam_j: float, p_ij: float, p_ji: float) -> float:
    for p in (p_ij, p_ji):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability out of range: {p}")
    return lam_i * p_ij + lam_j * p_ji


def conformance_rows(
    ells=range(1, 7), ks=range(1, 7), xis=(0.5, 1.0, 2.0, 4.0)
) -> list[dict]:
    """Quadrature vs series values over a parameter grid, at zero shift."""
    rows = []
    for ell in ells:
        for k in ks:
            for xi_i in xis:
                for xi_j in xis:
                    numeric = jockey_probability_fsd_numeric(ell, k, xi_i, xi_j, 0.0)
                    closed = jockey_probability_fsd_closed(ell, k, xi_i, xi_j)
                    rows.append(
                        {
                            "ell": ell,
                            "k": k,
                            "xi_i": xi_i,
                            "xi_j": xi_j,
                            "numeric": numeric,
                            "closed": closed,
                            "abs_diff": abs(numeric - closed),
                        }
                    )
    return rows
