import json
import math
import re
import subprocess
import sys

import numpy as np
import pytest

from bulletin_queues.charts import box_plot, box_stats, emit_charts, heatmap, wait_box_groups
from bulletin_queues.cli import main
from bulletin_queues.config import (
    REFERENCE_PAIRS,
    default_config,
    parse_config,
    parse_config_text,
    serialize_config,
)
from bulletin_queues.errors import MissingInput, ParseError, ValidationError
from bulletin_queues.impatience import BehaviorParams
from bulletin_queues.optimizer import ObjectiveWeights, RateBounds
from bulletin_queues.reports import SummaryRow, SummaryTable, build_summary_table, read_csv

SMALL_CONFIG = """\
[system]
lambda = 6
horizon = 60

[sweep]
intervals = 3, 9
lambdas = 3, 9
replications = 2
"""


def test_minimal_config_defaults():
    cfg = parse_config_text("[system]\nlambda = 4\nhorizon = 500\n")
    s = cfg.sim
    assert (s.lam, s.split, s.horizon, s.warmup, s.seed) == (4.0, 0.5, 500.0, 50.0, 0)
    assert (s.mu_i, s.mu_j) == (3.0, 3.0)
    assert s.bp == BehaviorParams(t_local=2.0, d=1.0, eta=0.2, r=3.0)
    assert s.weights == ObjectiveWeights(1.0, 1.0, 1.0)
    assert s.bounds == RateBounds(0.5, 15.0)
    assert (s.policy, s.alpha, s.step, s.bulletin_mode) == (False, 0.2, 0.5, "round_robin")
    sw = cfg.sweep
    assert sw.intervals == (3.0, 5.0, 7.0, 9.0)
    assert sw.lambdas == tuple(float(x) for x in range(3, 18, 2))
    assert (sw.replications, sw.policy, sw.base_seed) == (300, "both", 0)
    assert cfg.optimize.references == REFERENCE_PAIRS
    assert (cfg.optimize.lam_i, cfg.optimize.lam_j) == (1.6, 0.4)


def test_stability_violation_names_constraint():
    with pytest.raises(ValidationError, match="stability"):
        parse_config_text("[system]\nlambda = 6\nmu_i = 2.0\n")


@pytest.mark.parametrize(
    "text, line, field",
    [
        ("[system]\nlambda = 6\nhorizon = soon\n", 3, "system.horizon"),
        ("[system]\nlambda = 6\n[behavior]\nspeed = 3\n", 4, "behavior.speed"),
        ("[system]\nlambda = 6\n[sweep]\npolicy = maybe\n", 4, "sweep.policy"),
        ("[system]\nhorizon = 10\n", None, "system.lambda"),
    ],
)
def test_parse_errors_carry_diagnostics(text, line, field):
    with pytest.raises(ParseError) as info:
        parse_config_text(text)
    assert info.value.line == line
    assert info.value.field == field


def test_unknown_section_and_garbage():
    with pytest.raises(ParseError) as info:
        parse_config_text("[system]\nlambda = 6\n\n[extras]\nx = 1\n")
    assert info.value.line == 4
    with pytest.raises(ParseError):
        parse_config_text("lambda = 6\n")


def test_round_trip_digest():
    cfg = parse_config_text(SMALL_CONFIG + "[weights]\ntau = 0.7\n[optimize]\nreferences = 3:4.5:2.5, 9:8.5:6.5\n")
    again = parse_config_text(serialize_config(cfg))
    assert again.digest() == cfg.digest()
    assert again == cfg


def test_digest_ignores_key_order():
    a = parse_config_text("[system]\nlambda = 6\nhorizon = 80\n[behavior]\nr = 5\neta = 0.1\n")
    b = parse_config_text("[behavior]\neta = 0.1\nr = 5\n[system]\nhorizon = 80\nlambda = 6\n")
    assert a.digest() == b.digest()
    assert a.digest() != default_config().digest()


def test_parse_config_from_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(SMALL_CONFIG)
    assert parse_config(p).sweep.replications == 2
    with pytest.raises(ParseError):
        parse_config(tmp_path / "missing.ini")


def test_summary_footer_recomputed():
    rows = [
        SummaryRow(3.0, 1.0, 2.0, (1.0, 1.0), (4.5, 2.5)),
        SummaryRow(5.0, 2.0, 5.0, (1.0, 1.0), (2.5, 0.5)),
        SummaryRow(7.0, 4.0, 3.0, (1.0, 1.0), (6.5, 5.5)),
    ]
    f = SummaryTable(rows).footer()
    assert f["optimized"]["mean"] == pytest.approx(7 / 3, abs=1e-12)
    assert f["optimized"]["std"] == pytest.approx(np.std([1, 2, 4]), abs=1e-12)
    assert (f["non_optimized"]["min"], f["non_optimized"]["max"]) == (2.0, 5.0)
    assert f["avg_improvement"] == pytest.approx(10 / 3 - 7 / 3)


def test_summary_table_dominates_reference_any_weights():
    cfg = default_config()
    for w in (ObjectiveWeights(1, 1, 1), ObjectiveWeights(0.2, 3.0, 0.5), ObjectiveWeights(1, 0, 0)):
        table, _ = build_summary_table(cfg.sim.bp, cfg.optimize, w, cfg.sim.bounds, (3, 5, 7, 9))
        for row in table.rows:
            assert row.optimized <= row.non_optimized
        assert table.footer()["optimized"]["mean"] == pytest.approx(
            np.mean([r.optimized for r in table.rows]), abs=1e-12
        )


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL_CONFIG)
    return p


def test_sweep_outputs_and_manifest(tmp_path, small_config):
    out = tmp_path / "a"
    assert run_cli("sweep", "--config", str(small_config), "--out", str(out), "--replications", "3") == 0
    rows = read_csv(out / "sweep.csv")
    assert len(rows) == 2 * 2 * 2 * 3
    assert sorted({int(r["seed"]) for r in rows}) == [0, 1, 2]
    manifest = json.loads((out / "manifest_sweep.json").read_text())
    assert manifest["overrides"] == {"replications": 3}
    assert manifest["config"]["sweep"]["replications"] == 3  # effective value
    assert manifest["base_seed"] == 0
    assert set(manifest["outputs"]) == {"sweep.csv", "aggregate.json"}
    assert re.fullmatch(r"[0-9a-f]{64}", manifest["config_digest"])
    cells = json.loads((out / "aggregate.json").read_text())
    assert len(cells) == 8 and all(c["replications"] == 3 for c in cells)


def test_sweep_csv_byte_identical(tmp_path, small_config):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli("sweep", "--config", str(small_config), "--out", str(out), "--seed", "9") == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    assert (a / "aggregate.json").read_bytes() == (b / "aggregate.json").read_bytes()


def test_exit_codes(tmp_path, small_config, monkeypatch):
    bad = tmp_path / "bad.ini"
    bad.write_text("[system]\nlambda = 6\nmu_j = 1\n")
    assert run_cli("sweep", "--config", str(bad), "--out", str(tmp_path / "x")) == 1
    assert run_cli("charts", "--out", str(tmp_path / "empty")) == 1

    def boom(*a, **k):
        raise RuntimeError("worker crashed")

    monkeypatch.setattr("bulletin_queues.cli.write_csv", boom)
    out = tmp_path / "y"
    assert run_cli("sweep", "--config", str(small_config), "--out", str(out)) == 2
    assert not (out / "sweep.csv").exists() and not (out / "aggregate.json").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "bulletin_queues", "conformance", "--out", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert "576 points" in proc.stdout
    assert read_csv(tmp_path / "conformance.csv")[0].keys() == {
        "ell", "k", "xi_i", "xi_j", "numeric", "closed", "abs_diff"
    }


def test_empty_csv_missing_input(tmp_path):
    csv_path = tmp_path / "sweep.csv"
    csv_path.write_text("r,lambda\n")
    with pytest.raises(MissingInput):
        emit_charts(csv_path, tmp_path / "charts")
    assert not (tmp_path / "charts").exists()
    assert run_cli("charts", "--input", str(tmp_path), "--out", str(tmp_path / "charts")) == 1
    assert not list(tmp_path.glob("charts/*.svg"))


def attrs(svg, cls):
    return [dict(re.findall(r'(data-[\w-]+)="([^"]*)"', m)) for m in re.findall(rf'<g class="{cls}"([^>]*)>', svg)]


def test_charts_end_to_end(tmp_path, small_config):
    out = tmp_path / "run"
    assert run_cli("sweep", "--config", str(small_config), "--out", str(out)) == 0
    assert run_cli("optimize", "--config", str(small_config), "--out", str(out)) == 0
    assert run_cli("charts", "--out", str(out)) == 0
    rows = read_csv(out / "sweep.csv")

    # box medians recomputed from the CSV
    svg = (out / "waits_box_pooled.svg").read_text()
    boxes = {b["data-label"]: b for b in attrs(svg, "box")}
    for pol in ("off", "on"):
        for model in ("fsd", "icd"):
            vals = [float(r[f"wait_median_impatient_{model}"]) for r in rows
                    if r["policy"] == pol and r[f"wait_median_impatient_{model}"] != ""]
            box = boxes[f"policy {pol} {model.upper()}"]
            if vals:
                assert abs(float(box["data-median"]) - float(np.median(vals))) < 1e-9
            else:
                assert box["data-n"] == "0"

    # heatmap markers equal the reported optima
    optima = json.loads((out / "optima.json").read_text())
    for r in ("3", "9"):
        markers = {m["data-label"]: m for m in attrs((out / f"landscape_r{r}.svg").read_text(), "marker")}
        mk = markers["optimized"]
        assert [float(mk["data-mu-i"]), float(mk["data-mu-j"])] == optima[r]["optimum"]
        ref = markers["non-optimized"]
        assert [float(ref["data-mu-i"]), float(ref["data-mu-j"])] == optima[r]["reference"]

    # charts are byte-stable
    again = tmp_path / "again"
    assert run_cli("charts", "--input", str(out), "--out", str(again)) == 0
    for p in sorted(again.glob("*.svg")):
        assert p.read_bytes() == (out / p.name).read_bytes()
    names = sorted(p.name for p in again.glob("*.svg"))
    assert "rates_r3_policy_off.svg" in names and "rates_r9_policy_on.svg" in names


def test_interval_box_grouping(tmp_path, small_config):
    out = tmp_path / "run"
    assert run_cli("sweep", "--config", str(small_config), "--out", str(out)) == 0
    assert run_cli("charts", "--out", str(out), "--box-grouping", "interval") == 0
    labels = [b["data-label"] for b in attrs((out / "waits_box_interval.svg").read_text(), "box")]
    assert len(labels) == 8 and labels[0].startswith("r=3 ")


def test_box_stats_and_groups():
    s = box_stats([1.0, 2.0, 3.0, 4.0, 100.0, math.nan])
    assert s["median"] == 3.0 and s["n"] == 5 and s["hi"] == 4.0
    assert box_stats([]) is None
    rows = [{"r": "3", "policy": "off", "wait_median_impatient_fsd": "1.5", "wait_median_impatient_icd": ""}]
    groups = wait_box_groups(rows)
    assert [label for label, _ in groups] == ["policy off FSD", "policy off ICD"]
    assert groups[0][1] == [1.5] and math.isnan(groups[1][1][0])
    svg = box_plot("t", [("a", [1.0, 2.0, 3.0])], "y")
    assert 'data-median="2.0"' in svg
    hm = heatmap("t", [{"mu_i": "1", "mu_j": "1", "objective": "2.0"}], [("optimized", 1.0, 1.0)])
    assert 'data-mu-i="1.0"' in hm
