"""Seeded discrete-event simulation of two impatient FCFS queues.

Poisson arrivals are thinned into queues ``i`` (0) and ``j`` (1) and served
exponentially. Every ``r`` seconds a bulletin is broadcast, alternating
between the service-rate (FSD) and inter-change-time (ICD) models; every
tenant present reacts to it by staying, reneging to local processing, or
jockeying to the tail of the other queue. With the policy enabled the
queues recalibrate their rates right after each round of reactions.
"""

from __future__ import annotations

import math
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InvalidConfig
from .impatience import (
    BehaviorParams,
    jockey_probability_fsd_numeric,
    jockey_probability_icd,
    renege_probability,
)
from .optimizer import ObjectiveWeights, RateBounds
from .policy import (
    Action,
    ModelKind,
    PolicyState,
    PredictiveModel,
    ReactionObservation,
    expected_utility,
    recalibrate,
)
from .state_models import Dominance, ServiceRateChain, effective_rate, fsd_compare, icd_time

THREADS_ENV = "BULLETIN_QUEUES_THREADS"
BULLETIN_MODES = ("round_robin", "fsd", "icd", "off")


class Outcome(str, Enum):
    SERVED = "served"
    RENEGED = "reneged"
    JOCKEYED_SERVED = "jockeyed-then-served"
    JOCKEYED_RENEGED = "jockeyed-then-reneged"


@dataclass(frozen=True)
class SimConfig:
    lam: float = 6.0
    split: float = 0.5
    mu_i: float = 4.0
    mu_j: float = 4.0
    bp: BehaviorParams = BehaviorParams()
    horizon: float = 200.0
    seed: int = 0
    policy: bool = False
    warmup: float | None = None
    bulletin_mode: str = "round_robin"
    chain_spread: float = 0.2
    chain_probs: tuple[float, ...] = (0.25, 0.5, 0.25)
    bounds: RateBounds = RateBounds()
    weights: ObjectiveWeights = ObjectiveWeights()
    step: float = 0.5
    alpha: float = 0.2

    def __post_init__(self):
        if self.warmup is None:
            object.__setattr__(self, "warmup", 0.1 * self.horizon)
        if not self.horizon > self.warmup >= 0:
            raise InvalidConfig("need horizon > warmup >= 0")
        if not 0 < self.split < 1:
            raise InvalidConfig("split ratio must lie in (0, 1)")
        if self.lam < 0:
            raise InvalidConfig("arrival rate must be nonnegative")
        if self.bulletin_mode not in BULLETIN_MODES:
            raise InvalidConfig(f"bulletin_mode must be one of {BULLETIN_MODES}")
        for name, mu, lam in (("mu_i", self.mu_i, self.lam_i), ("mu_j", self.mu_j, self.lam_j)):
            if not mu > lam:
                raise InvalidConfig(f"stability requires {name} > lambda ({mu} <= {lam})")

    @property
    def lam_i(self) -> float:
        return self.lam * self.split

    @property
    def lam_j(self) -> float:
        return self.lam * (1.0 - self.split)


@dataclass(frozen=True)
class Bulletin:
    kind: ModelKind
    time: float
    seq: int
    chains: tuple[ServiceRateChain, ServiceRateChain] | None = None
    icd_times: tuple[float, float] | None = None


@dataclass
class Request:
    id: int
    arrival: float
    source: int
    queue: int
    t_local: float
    jockeys: int = 0
    start: float | None = None
    outcome: Outcome | None = None
    end: float | None = None
    last_moved: int = -1

    def finish(self, outcome: Outcome, now: float) -> None:
        if self.outcome is not None:
            raise RuntimeError(f"request {self.id} already has outcome {self.outcome}")
        self.outcome = outcome
        self.end = now


@dataclass(frozen=True)
class ReactionEvent:
    time: float
    kind: ModelKind
    queue: int
    request: int
    position: int
    action: Action
    queue_length: int


@dataclass
class Metrics:
    window: float
    lam_i: float
    lam_j: float
    renege_count: dict = field(default_factory=lambda: {k: 0 for k in ModelKind})
    jockey_count: dict = field(default_factory=lambda: {k: 0 for k in ModelKind})
    exposures: dict = field(default_factory=lambda: {(k, q): 0 for k in ModelKind for q in (0, 1)})
    reneges_by_queue: dict = field(default_factory=lambda: {(k, q): 0 for k in ModelKind for q in (0, 1)})
    jockeys_by_queue: dict = field(default_factory=lambda: {(k, q): 0 for k in ModelKind for q in (0, 1)})
    waits: dict = field(default_factory=lambda: {o: [] for o in Outcome})
    impatient_waits: dict = field(default_factory=lambda: {k: [] for k in ModelKind})
    mu_series: list = field(default_factory=list)
    policy_trace: list = field(default_factory=list)
    length_area: list = field(default_factory=lambda: [0.0, 0.0])
    arrivals: int = 0
    arrivals_total: int = 0
    served_total: int = 0
    reneged_total: int = 0
    jockeyed_total: int = 0
    residual: int = 0
    bulletins: int = 0
    mu_final: tuple[float, float] = (math.nan, math.nan)

    def renege_rate(self, kind: ModelKind) -> float:
        return self.renege_count[kind] / self.window

    def jockey_rate(self, kind: ModelKind) -> float:
        return self.jockey_count[kind] / self.window

    def renege_fraction(self, queue: int, kind: ModelKind) -> float:
        """Share of bulletin exposures in ``queue`` that ended in reneging."""
        n = self.exposures[(kind, queue)]
        return self.reneges_by_queue[(kind, queue)] / n if n else math.nan

    def renege_throughput(self, queue: int, kind: ModelKind) -> float:
        """Arrival rate times the per-exposure renege frequency.

        Every tenant present at a bulletin is one exposure; in steady state
        its position is distributed like the stationary queue length, so this
        estimates the arrival-weighted renege rate of the closed form.
        """
        lam = self.lam_i if queue == 0 else self.lam_j
        return lam * self.renege_fraction(queue, kind)

    def mean_length(self, queue: int) -> float:
        return self.length_area[queue] / self.window

    def wait_samples(self, group: str) -> list[float]:
        if group == "served":
            return list(self.waits[Outcome.SERVED])
        if group == "reneged":
            return self.waits[Outcome.RENEGED] + self.waits[Outcome.JOCKEYED_RENEGED]
        if group == "jockeyed":
            return self.waits[Outcome.JOCKEYED_SERVED] + self.waits[Outcome.JOCKEYED_RENEGED]
        if group == "all_served":
            return self.waits[Outcome.SERVED] + self.waits[Outcome.JOCKEYED_SERVED]
        raise ValueError(f"unknown wait group {group!r}")


def _median(xs) -> float:
    return float(np.median(xs)) if len(xs) else math.nan


class _Stream:
    """Buffered uniforms from a counter-based (Philox) generator."""

    def __init__(self, seed: int, name: str, block: int = 4096):
        key = [int(seed) & 0xFFFFFFFF, *name.encode()]
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
        self._block = block
        self._buf = self._gen.random(block)
        self._pos = 0

    def uniform(self) -> float:
        if self._pos == self._block:
            self._buf = self._gen.random(self._block)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return float(u)

    def exponential(self, rate: float) -> float:
        return -math.log1p(-self.uniform()) / rate


class Simulation:
    """One replication's mutable state and event loop."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.bp = config.bp
        self.lams = (config.lam_i, config.lam_j)
        self.mus = [config.mu_i, config.mu_j]
        self.queues: tuple[deque, deque] = (deque(), deque())
        self.now = 0.0
        self.seq = 0
        self._next_id = 0
        seed = config.seed
        self.arrival_stream = _Stream(seed, "arrival")
        self.route_stream = _Stream(seed, "route")
        self.service_streams = (_Stream(seed, "service_i"), _Stream(seed, "service_j"))
        self.react_stream = _Stream(seed, "react")
        self.next_dep = [math.inf, math.inf]
        self.metrics = Metrics(config.horizon - config.warmup, config.lam_i, config.lam_j)
        self.model = PredictiveModel(alpha=config.alpha)
        self.policy_state = PolicyState(
            config.mu_i, config.mu_j, config.step, config.bounds, config.weights
        )
        self.requests: list[Request] = []

    # -- queue primitives -------------------------------------------------

    def _measured(self, t: float) -> bool:
        return t >= self.config.warmup

    def add_request(self, queue: int, now: float | None = None) -> Request:
        now = self.now if now is None else now
        req = Request(self._next_id, now, queue, queue, self.bp.t_local)
        self._next_id += 1
        self.requests.append(req)
        self.queues[queue].append(req)
        self.metrics.arrivals_total += 1
        if self._measured(now):
            self.metrics.arrivals += 1
        self._start_service(queue, now)
        return req

    def _start_service(self, queue: int, now: float) -> None:
        q = self.queues[queue]
        if q and q[0].start is None:
            q[0].start = now
            self.next_dep[queue] = now + self.service_streams[queue].exponential(self.mus[queue])

    def _depart(self, queue: int, now: float) -> None:
        req = self.queues[queue].popleft()
        outcome = Outcome.JOCKEYED_SERVED if req.jockeys else Outcome.SERVED
        req.finish(outcome, now)
        self.metrics.served_total += 1
        if self._measured(now):
            self.metrics.waits[outcome].append(req.start - req.arrival)
        self.next_dep[queue] = math.inf
        self._start_service(queue, now)

    def set_rates(self, mu_i: float, mu_j: float, now: float) -> None:
        for queue, mu in enumerate((mu_i, mu_j)):
            if mu != self.mus[queue]:
                self.mus[queue] = mu
                if self.queues[queue]:
                    # memoryless: redraw the residual service at the new rate
                    self.next_dep[queue] = now + self.service_streams[queue].exponential(mu)

    # -- bulletins -------------------------------------------------------------

    def bulletin_kind(self, seq: int) -> ModelKind:
        mode = self.config.bulletin_mode
        if mode == "fsd":
            return ModelKind.FSD
        if mode == "icd":
            return ModelKind.ICD
        return ModelKind.FSD if seq % 2 == 0 else ModelKind.ICD

    def dispatch_bulletin(self, clock: float) -> Bulletin:
        """Snapshot the current information model; kinds alternate by sequence."""
        seq = self.seq
        self.seq += 1
        kind = self.bulletin_kind(seq)
        if kind is ModelKind.FSD:
            chains = tuple(
                ServiceRateChain.centered(mu, self.config.chain_spread, self.config.chain_probs)
                for mu in self.mus
            )
            return Bulletin(kind, clock, seq, chains=chains)
        times = tuple(icd_time(lam) if lam > 0 else math.inf for lam in self.lams)
        return Bulletin(kind, clock, seq, icd_times=times)

    def apply_reactions(self, bulletin: Bulletin) -> list[ReactionEvent]:
        """Let every tenant present react to ``bulletin``, queue i first, head to tail."""
        now = bulletin.time
        kind = bulletin.kind
        bp = self.bp
        measured = self._measured(now)
        m = self.metrics
        events = []
        if kind is ModelKind.FSD:
            rates = [effective_rate(c) for c in bulletin.chains]
            verdict = fsd_compare(bulletin.chains[0], bulletin.chains[1])
            better = {Dominance.X_DOMINATES: 0, Dominance.Y_DOMINATES: 1}.get(verdict)
        else:
            rates = list(self.mus)
            t_i, t_j = bulletin.icd_times
            renege_gate = (t_i < t_j, t_j < t_i)

        # decisions are simultaneous: positions and lengths are read at dispatch
        lengths = (len(self.queues[0]), len(self.queues[1]))
        for q in (0, 1):
            o = 1 - q
            lam_q, lam_o = self.lams
            if q == 1:
                lam_q, lam_o = lam_o, lam_q
            old = self.queues[q]
            kept: deque = deque()
            for ell, req in enumerate(old):
                if req.last_moved == bulletin.seq:
                    kept.append(req)
                    continue
                action = Action.STAY
                if ell >= 1:
                    if kind is ModelKind.FSD:
                        p_jockey = 0.0
                        if better == o:
                            k = lengths[o] + 1
                            p_jockey = jockey_probability_fsd_numeric(
                                ell, k, 2 * rates[q] - lam_q, 2 * rates[o] - lam_o, bp.eta * bp.r
                            )
                        gate = True
                    else:
                        p_jockey = jockey_probability_icd(lam_q, lam_o, bp)
                        gate = renege_gate[q]
                    if p_jockey > 0 and self.react_stream.uniform() < p_jockey:
                        action = Action.JOCKEY
                    elif gate:
                        p_renege = renege_probability(ell, rates[q], lam_q, bp)
                        if p_renege > 0 and self.react_stream.uniform() < p_renege:
                            action = Action.RENEGE
                events.append(ReactionEvent(now, kind, q, req.id, ell, action, lengths[q]))
                if measured:
                    m.exposures[(kind, q)] += 1
                if action is Action.STAY:
                    kept.append(req)
                elif action is Action.RENEGE:
                    outcome = Outcome.JOCKEYED_RENEGED if req.jockeys else Outcome.RENEGED
                    req.finish(outcome, now)
                    m.reneged_total += 1
                    if measured:
                        m.renege_count[kind] += 1
                        m.reneges_by_queue[(kind, q)] += 1
                        m.waits[outcome].append(now - req.arrival)
                        m.impatient_waits[kind].append(now - req.arrival)
                else:
                    req.jockeys += 1
                    req.queue = o
                    req.last_moved = bulletin.seq
                    self.queues[o].append(req)
                    m.jockeyed_total += 1
                    if measured:
                        m.jockey_count[kind] += 1
                        m.jockeys_by_queue[(kind, q)] += 1
                        m.impatient_waits[kind].append(now - req.arrival)
                    self._start_service(o, now)
            old.clear()
            old.extend(kept)
        return events

    def _policy_step(self, bulletin: Bulletin, events: list[ReactionEvent]) -> None:
        for ev in events:
            self.model.observe(
                ReactionObservation(ev.kind, ev.queue, ev.action, ev.queue_length, 0.0)
            )
        state = self.policy_state
        lam_i, lam_j = self.lams
        new = recalibrate(state, self.model, lam_i, lam_j, self.bp, bulletin.kind)
        state.mu_i, state.mu_j = new
        self.set_rates(*new, bulletin.time)
        util = expected_utility(state, self.model, lam_i, lam_j, self.bp, bulletin.kind)
        p = [self.model.probabilities(bulletin.kind, q) for q in (0, 1)]
        self.metrics.policy_trace.append(
            (bulletin.time, new[0], new[1], util, (p[0][1] + p[1][1]) / 2, (p[0][2] + p[1][2]) / 2)
        )

    def _bulletin(self, now: float) -> None:
        bulletin = self.dispatch_bulletin(now)
        events = self.apply_reactions(bulletin)
        if self.config.policy:
            self._policy_step(bulletin, events)
        self.metrics.bulletins += 1
        self.metrics.mu_series.append((now, self.mus[0], self.mus[1]))

    # -- main loop --------------------------------------------------------------

    def run(self) -> Metrics:
        cfg = self.config
        horizon, warmup = cfg.horizon, cfg.warmup
        lam, split = cfg.lam, cfg.split
        r = cfg.bp.r
        next_arr = self.arrival_stream.exponential(lam) if lam > 0 else math.inf
        next_bul = r if cfg.bulletin_mode != "off" else math.inf
        area = self.metrics.length_area
        queues = self.queues
        last = 0.0
        while True:
            d0, d1 = self.next_dep
            t = min(next_arr, d0, d1, next_bul)
            if t > horizon:
                break
            if t > warmup:
                span = t - max(last, warmup)
                area[0] += len(queues[0]) * span
                area[1] += len(queues[1]) * span
            last = t
            self.now = t
            if t == next_arr:
                queue = 0 if self.route_stream.uniform() < split else 1
                self.add_request(queue, t)
                next_arr = t + self.arrival_stream.exponential(lam)
            elif t == d0:
                self._depart(0, t)
            elif t == d1:
                self._depart(1, t)
            else:
                self._bulletin(t)
                next_bul = (self.seq + 1) * r
        span = horizon - max(last, warmup)
        area[0] += len(queues[0]) * span
        area[1] += len(queues[1]) * span
        self.metrics.residual = len(queues[0]) + len(queues[1])
        self.metrics.mu_final = (self.mus[0], self.mus[1])
        return self.metrics


def run_replication(config: SimConfig) -> Metrics:
    return Simulation(config).run()


# -- sweeps ----------------------------------------------------------------------

CSV_COLUMNS = (
    "r",
    "lambda",
    "policy",
    "seed",
    "renege_rate_fsd",
    "renege_rate_icd",
    "jockey_rate_fsd",
    "jockey_rate_icd",
    "wait_median_reneged",
    "wait_median_jockeyed",
    "wait_median_served",
    "mu_i_final",
    "mu_j_final",
    "wait_median_impatient_fsd",
    "wait_median_impatient_icd",
    "arrivals",
    "served",
    "reneged",
    "residual",
)
METRIC_COLUMNS = CSV_COLUMNS[4:15]


def metrics_row(config: SimConfig, metrics: Metrics) -> dict:
    return {
        "r": config.bp.r,
        "lambda": config.lam,
        "policy": "on" if config.policy else "off",
        "seed": config.seed,
        "renege_rate_fsd": metrics.renege_rate(ModelKind.FSD),
        "renege_rate_icd": metrics.renege_rate(ModelKind.ICD),
        "jockey_rate_fsd": metrics.jockey_rate(ModelKind.FSD),
        "jockey_rate_icd": metrics.jockey_rate(ModelKind.ICD),
        "wait_median_reneged": _median(metrics.wait_samples("reneged")),
        "wait_median_jockeyed": _median(metrics.wait_samples("jockeyed")),
        "wait_median_served": _median(metrics.wait_samples("served")),
        "mu_i_final": metrics.mu_final[0],
        "mu_j_final": metrics.mu_final[1],
        "wait_median_impatient_fsd": _median(metrics.impatient_waits[ModelKind.FSD]),
        "wait_median_impatient_icd": _median(metrics.impatient_waits[ModelKind.ICD]),
        "arrivals": metrics.arrivals_total,
        "served": metrics.served_total,
        "reneged": metrics.reneged_total,
        "residual": metrics.residual,
    }


@dataclass(frozen=True)
class SweepSpec:
    intervals: tuple[float, ...] = (3.0, 5.0, 7.0, 9.0)
    lambdas: tuple[float, ...] = (3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0, 17.0)
    replications: int = 300
    policy: str = "both"
    base_seed: int = 0
    initial_mu: tuple[float, float] | None = None
    mu_headroom: float = 1.0

    def __post_init__(self):
        if self.policy not in ("on", "off", "both"):
            raise InvalidConfig("policy must be on, off or both")
        if self.replications < 1:
            raise InvalidConfig("replications must be >= 1")
        if not self.intervals or not self.lambdas:
            raise InvalidConfig("intervals and lambdas must be nonempty")

    @property
    def policy_flags(self) -> tuple[bool, ...]:
        return {"on": (True,), "off": (False,), "both": (False, True)}[self.policy]


def _lattice_ceil(x: float, step: float) -> float:
    return round(math.ceil(x / step - 1e-12) * step, 12)


def cell_config(base: SimConfig, spec: SweepSpec, r: float, lam: float, policy: bool, rep: int) -> SimConfig:
    """Configuration of one replication in a sweep cell."""
    lam_i, lam_j = lam * base.split, lam * (1 - base.split)
    if spec.initial_mu is not None and spec.initial_mu[0] > lam_i and spec.initial_mu[1] > lam_j:
        mu_i, mu_j = spec.initial_mu
    else:
        # smallest lattice rates with at least the configured headroom over lambda
        mu_i = _lattice_ceil(lam_i + spec.mu_headroom, base.step)
        mu_j = _lattice_ceil(lam_j + spec.mu_headroom, base.step)
    bp = replace(base.bp, r=r)
    return replace(
        base, lam=lam, mu_i=mu_i, mu_j=mu_j, bp=bp, policy=policy, seed=spec.base_seed + rep
    )


def sweep_configs(base: SimConfig, spec: SweepSpec) -> list[SimConfig]:
    return [
        cell_config(base, spec, r, lam, policy, rep)
        for r in spec.intervals
        for lam in spec.lambdas
        for policy in spec.policy_flags
        for rep in range(spec.replications)
    ]


def _run_row(config: SimConfig) -> dict:
    return metrics_row(config, run_replication(config))


def worker_count() -> int:
    cap = os.environ.get(THREADS_ENV)
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


@dataclass
class ExperimentResult:
    rows: list[dict]
    cells: list[dict]


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean, median and std of every metric per ``(r, lambda, policy)`` cell."""
    groups: dict = {}
    for row in rows:
        groups.setdefault((row["r"], row["lambda"], row["policy"]), []).append(row)
    cells = []
    for (r, lam, pol), members in sorted(groups.items()):
        cell = {"r": r, "lambda": lam, "policy": pol, "replications": len(members)}
        for col in METRIC_COLUMNS:
            vals = np.array([mrow[col] for mrow in members], dtype=float)
            vals = vals[~np.isnan(vals)]
            cell[col] = {
                "mean": float(vals.mean()) if vals.size else math.nan,
                "median": float(np.median(vals)) if vals.size else math.nan,
                "std": float(vals.std()) if vals.size else math.nan,
            }
        cells.append(cell)
    return cells


def run_experiment(spec: SweepSpec, base: SimConfig = SimConfig(), workers: int | None = None) -> ExperimentResult:
    """Run every replication of the sweep; output order is fixed by the sweep layout."""
    configs = sweep_configs(base, spec)
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_row, configs, chunksize=max(1, len(configs) // (4 * workers))))
    else:
        rows = [_run_row(c) for c in configs]
    return ExperimentResult(rows, aggregate(rows))
