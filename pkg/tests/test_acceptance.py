"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict that is printed in the
"acceptance criteria" section of the pytest terminal summary.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from bulletin_queues.config import default_config
from bulletin_queues.impatience import (
    BehaviorParams,
    erlang_wait_cdf,
    jockey_probability_icd,
    renege_rate_fsd,
)
from bulletin_queues.optimizer import (
    GridSpec,
    ObjectiveWeights,
    check_slackness,
    delay_gradient,
    objective,
    optimize,
)
from bulletin_queues.policy import ModelKind
from bulletin_queues.reports import CONFORMANCE_COLUMNS, build_summary_table, read_csv, write_conformance
from bulletin_queues.sim_engine import (
    Outcome,
    SimConfig,
    metrics_row,
    run_experiment,
    run_replication,
    sweep_configs,
)

INTERVALS = (3.0, 5.0, 7.0, 9.0)


def scan(lam_i, lam_j, bp, w):
    """Exhaustive scan over the 0.5-step lattice, first strict minimum wins."""
    best = None
    for a in range(1, 31):
        for b in range(1, 31):
            mi, mj = 0.5 * a, 0.5 * b
            if mi > lam_i and mj > lam_j:
                v = objective(mi, mj, lam_i, lam_j, bp, w)
                if best is None or v < best[2]:
                    best = (mi, mj, v)
    return best


def test_c1_grid_oracle_equivalence(acceptance):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    mismatches, n = 0, 24
    for _ in range(n):
        lam_i, lam_j = rng.uniform(0.05, 8.0, 2)
        bp = BehaviorParams(
            t_local=rng.uniform(0.2, 5.0), d=rng.uniform(0.1, 3.0), eta=rng.uniform(0.0, 1.0),
            r=float(rng.choice(INTERVALS)),
        )
        w = ObjectiveWeights(*rng.uniform(0.0, 2.0, 3))
        res = optimize(GridSpec(), lam_i, lam_j, bp, w)
        mismatches += res.best != scan(lam_i, lam_j, bp, w)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 30
    acceptance(1, ok, f"{n} configurations, {mismatches} mismatches, {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def summary():
    cfg = default_config()
    start = time.perf_counter()
    table, results = build_summary_table(cfg.sim.bp, cfg.optimize, cfg.sim.weights, cfg.sim.bounds, INTERVALS)
    return cfg, table, results, time.perf_counter() - start


def test_c2_table_structure(acceptance, summary):
    _, table, _, elapsed = summary
    f = table.footer()
    dominated = all(r.optimized <= r.non_optimized for r in table.rows)
    ok = (
        dominated
        and f["avg_improvement"] > 0
        and f["optimized"]["std"] < f["non_optimized"]["std"]
        and elapsed < 60
    )
    acceptance(
        2, ok,
        f"opt mean {f['optimized']['mean']:.4f} std {f['optimized']['std']:.4f}; "
        f"non-opt mean {f['non_optimized']['mean']:.4f} std {f['non_optimized']['std']:.4f}; "
        f"improvement {f['avg_improvement']:.4f}; {elapsed:.1f}s",
    )
    assert ok


def test_c3_renege_throughput_vs_closed_form(acceptance):
    bp = BehaviorParams(t_local=1.0, d=1.0, eta=0.2, r=3.0)
    # queue i carries lambda_i = 2 at mu_i = 5; queue j is a light, slow partner
    # so FSD bulletins always rank queue i first and no tenant leaves it by jockeying
    cfg = SimConfig(
        lam=2.05, split=2.0 / 2.05, mu_i=5.0, mu_j=1.0, bp=bp, horizon=100_000.0,
        seed=0, policy=False, bulletin_mode="fsd",
    )
    start = time.perf_counter()
    m = run_replication(cfg)
    elapsed = time.perf_counter() - start
    measured = m.renege_throughput(0, ModelKind.FSD)
    predicted = renege_rate_fsd(cfg.lam_i, cfg.mu_i, bp)
    rel = (measured - predicted) / predicted
    ok = abs(rel) <= 0.05 and elapsed < 20 and m.jockeys_by_queue[(ModelKind.FSD, 0)] == 0
    acceptance(3, ok, f"simulated {measured:.5f} vs closed form {predicted:.5f} ({rel:+.2%}), {elapsed:.1f}s")
    assert ok


def test_c4_erlang_cdf_monte_carlo(acceptance):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    points = [(int(rng.integers(1, 11)), float(rng.uniform(0.5, 4.0))) for _ in range(20)]
    worst = 0.0
    for ell, nu in points:
        draws = rng.exponential(1.0 / nu, size=(1_000_000, ell)).sum(axis=1)
        t = float(np.median(draws)) * rng.uniform(0.5, 1.5)
        worst = max(worst, abs(np.mean(draws <= t) - erlang_wait_cdf(ell, nu, t)))
    elapsed = time.perf_counter() - start
    ok = worst < 0.005 and elapsed < 30
    acceptance(4, ok, f"20 points, max |MC - CDF| = {worst:.5f}, {elapsed:.1f}s")
    assert ok


def test_c5_conformance_report(acceptance, tmp_path):
    start = time.perf_counter()
    path = tmp_path / "conformance.csv"
    rows = write_conformance(path)
    elapsed = time.perf_counter() - start
    table = read_csv(path)
    assert tuple(table[0]) == CONFORMANCE_COLUMNS and len(table) == 6 * 6 * 16
    lookup = {(r["ell"], r["k"], r["xi_i"], r["xi_j"]): r["numeric"] for r in rows}
    in_range = all(0.0 <= v <= 1.0 for v in lookup.values())
    comp = max(abs(v + lookup[(k, ell, xj, xi)] - 1.0) for (ell, k, xi, xj), v in lookup.items())
    diffs = np.array([float(r["abs_diff"]) for r in table])
    ok = in_range and comp < 1e-6 and elapsed < 60
    acceptance(
        5, ok,
        f"{len(rows)} points in [0,1]: {in_range}; complementarity max err {comp:.2e}; "
        f"series deviates by up to {diffs.max():.4f} ({int((diffs > 1e-6).sum())} points > 1e-6), {elapsed:.1f}s",
    )
    assert ok


def test_c6_sigmoid_symmetry(acceptance):
    rng = np.random.default_rng(6)
    worst, equal_ok = 0.0, True
    for _ in range(1000):
        bp = BehaviorParams(t_local=2.0, d=rng.uniform(0.01, 5), eta=rng.uniform(0, 1), r=rng.uniform(0.5, 12))
        li, lj = rng.uniform(0.01, 20, 2)
        worst = max(worst, abs(jockey_probability_icd(li, lj, bp) + jockey_probability_icd(lj, li, bp) - 1.0))
        equal_ok &= jockey_probability_icd(li, li, bp) == 0.5
    ok = equal_ok and worst <= 1e-12
    acceptance(6, ok, f"1000 points, equal-rate value exactly 0.5: {equal_ok}; max |sum - 1| = {worst:.1e}")
    assert ok


def test_c7_kkt_checks(acceptance, summary):
    cfg, table, results, _ = summary
    w = cfg.sim.weights
    worst, checked, slack_ok = 0.0, 0, True
    for r, res in results.items():
        bp = dataclasses.replace(cfg.sim.bp, r=r)
        mus = res.best[:2]
        lams = (cfg.optimize.lam_i, cfg.optimize.lam_j)
        slack_ok &= check_slackness(res.kkt).passed
        for q in (0, 1):
            if res.kkt.active[q]:
                continue  # bound attained: not an interior coordinate
            h = 1e-4 * max(1.0, mus[q])

            def tau_term(mu):
                pair = list(mus)
                pair[q] = mu
                return objective(*pair, *lams, bp, ObjectiveWeights(w.tau, 0.0, 0.0))

            fd = (tau_term(mus[q] + h) - tau_term(mus[q] - h)) / (2 * h)
            analytic = w.tau * delay_gradient(mus[q], lams[q])
            worst = max(worst, abs(analytic - fd) / abs(fd))
            checked += 1
    ok = checked > 0 and worst <= 1e-6 and slack_ok
    acceptance(7, ok, f"{checked} interior coordinates, max rel err {worst:.2e}; slackness passes: {slack_ok}")
    assert ok


@pytest.fixture(scope="module")
def default_sweep():
    cfg = default_config()
    spec = dataclasses.replace(cfg.sweep, replications=30)
    start = time.perf_counter()
    res = run_experiment(spec, cfg.sim)
    return cfg, spec, res, time.perf_counter() - start


def cell_means(rows, col, r, policy):
    by_lam = {}
    for row in rows:
        if row["r"] == r and row["policy"] == policy:
            by_lam.setdefault(row["lambda"], []).append(row[col])
    return {lam: float(np.mean(v)) for lam, v in sorted(by_lam.items())}


def pooled_median(rows, col, r, policy):
    vals = [row[col] for row in rows if row["r"] == r and row["policy"] == policy and not math.isnan(row[col])]
    return float(np.median(vals))


@pytest.mark.slow
def test_c8_figure_directions(acceptance, default_sweep):
    _, _, res, elapsed = default_sweep
    rows = [dict(row, jockey_total=row["jockey_rate_fsd"] + row["jockey_rate_icd"]) for row in res.rows]

    std = {r: float(np.std(list(cell_means(rows, "jockey_total", r, "off").values()))) for r in (3.0, 9.0)}
    a = std[9.0] < std[3.0]

    medians = {
        (r, model, pol): pooled_median(rows, f"wait_median_impatient_{model}", r, pol)
        for r in (5.0, 7.0) for model in ("fsd", "icd") for pol in ("on", "off")
    }
    b = all(medians[(r, m, "on")] <= medians[(r, m, "off")] for r in (5.0, 7.0) for m in ("fsd", "icd"))

    fsd = [v for r in INTERVALS for pol in ("off", "on") for v in cell_means(rows, "jockey_rate_fsd", r, pol).values()]
    icd = [v for r in INTERVALS for pol in ("off", "on") for v in cell_means(rows, "jockey_rate_icd", r, pol).values()]
    c = float(np.mean(fsd)) <= float(np.mean(icd))

    ok = a and b and c and elapsed < 300
    detail = (
        f"(a) jockey std r=3 {std[3.0]:.4f} > r=9 {std[9.0]:.4f}: {a}; "
        f"(b) on<=off medians "
        + ", ".join(
            f"r={r:g} {m.upper()} {medians[(r, m, 'on')]:.3f}<={medians[(r, m, 'off')]:.3f}"
            for r in (5.0, 7.0) for m in ("fsd", "icd")
        )
        + f": {b}; (c) FSD {np.mean(fsd):.4f} <= ICD {np.mean(icd):.4f}: {c}; "
        f"{len(rows)} replications in {elapsed:.0f}s"
    )
    acceptance(8, ok, detail)
    assert ok


@pytest.mark.slow
def test_c9_determinism_and_conservation(acceptance, default_sweep):
    _, spec, res, _ = default_sweep
    conserved = all(row["arrivals"] == row["served"] + row["reneged"] + row["residual"] for row in res.rows)
    cfg = default_config()
    configs = sweep_configs(cfg.sim, spec)
    picks = list(range(0, len(configs), 97))
    identical = all(repr(metrics_row(configs[i], run_replication(configs[i]))) == repr(res.rows[i]) for i in picks)
    ok = conserved and identical
    acceptance(
        9, ok,
        f"conservation exact in {len(res.rows)} replications: {conserved}; "
        f"{len(picks)} reruns bit-identical: {identical}",
    )
    assert ok


def test_c10_mm1_sanity(acceptance):
    cfg = SimConfig(lam=4.0, split=0.5, mu_i=5.0, mu_j=5.0, horizon=50_000.0, seed=0, bulletin_mode="off")
    m = run_replication(cfg)
    waits = m.waits[Outcome.SERVED]
    theory = (2.0 / 5.0) / (5.0 - 2.0)
    rel = (float(np.mean(waits)) - theory) / theory
    ok = abs(rel) <= 0.03 and m.reneged_total == 0 and m.jockeyed_total == 0
    acceptance(10, ok, f"mean wait {np.mean(waits):.5f} vs {theory:.5f} ({rel:+.2%}) over {len(waits)} requests")
    assert ok
