"""Command-line entry point: ``bulletin-queues {sweep,optimize,charts,conformance}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .charts import emit_charts
from .config import ExperimentConfig, default_config, parse_config
from .errors import InvalidConfig, MissingInput
from .reports import (
    LANDSCAPE_COLUMNS,
    SummaryTable,
    build_summary_table,
    read_csv,
    write_conformance,
    write_csv,
)
from .sim_engine import CSV_COLUMNS, run_experiment

log = logging.getLogger("bulletin_queues")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


@dataclasses.dataclass
class RunManifest:
    command: str
    config_digest: str
    base_seed: int
    tool_version: str
    started: str
    finished: str = ""
    outputs: list = dataclasses.field(default_factory=list)
    overrides: dict = dataclasses.field(default_factory=dict)
    config: dict = dataclasses.field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("list must not be empty")
    return vals


def _load(args) -> tuple[ExperimentConfig, dict]:
    cfg = parse_config(args.config) if args.config else default_config()
    overrides = {}
    sweep = cfg.sweep
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["base_seed"] = args.seed
    if getattr(args, "replications", None) is not None:
        changes["replications"] = args.replications
    if getattr(args, "policy", None) is not None:
        changes["policy"] = args.policy
    if getattr(args, "intervals", None) is not None:
        changes["intervals"] = args.intervals
    if getattr(args, "lambdas", None) is not None:
        changes["lambdas"] = args.lambdas
    if changes:
        sweep = dataclasses.replace(sweep, **changes)
        overrides = {k: list(v) if isinstance(v, tuple) else v for k, v in changes.items()}
        cfg = dataclasses.replace(cfg, sweep=sweep)
    return cfg, overrides


def _manifest(command, cfg, overrides) -> RunManifest:
    return RunManifest(
        command=command,
        config_digest=cfg.digest(),
        base_seed=cfg.sweep.base_seed,
        tool_version=__version__,
        started=_now(),
        overrides=overrides,
        config=cfg.to_dict(),
    )


def _finish(manifest: RunManifest, out: Path, paths) -> None:
    manifest.outputs = [p.name for p in paths]
    manifest.finished = _now()
    manifest.write(out / f"manifest_{manifest.command}.json")


def cmd_sweep(args) -> int:
    cfg, overrides = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest("sweep", cfg, overrides)
    csv_path, agg_path = out / "sweep.csv", out / "aggregate.json"
    try:
        result = run_experiment(cfg.sweep, cfg.sim)
        write_csv(csv_path, CSV_COLUMNS, result.rows)
        agg_path.write_text(json.dumps(result.cells, indent=2, sort_keys=True) + "\n")
    except Exception:
        for p in (csv_path, agg_path):
            p.unlink(missing_ok=True)
        raise
    _finish(manifest, out, [csv_path, agg_path])
    log.info("wrote %d replications to %s", len(result.rows), csv_path)
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg, overrides = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest("optimize", cfg, overrides)
    table, results = build_summary_table(
        cfg.sim.bp, cfg.optimize, cfg.sim.weights, cfg.sim.bounds, cfg.sweep.intervals
    )
    paths = [write_csv(out / "summary_table.csv", SummaryTable.columns, table.csv_rows())]
    text_path = out / "summary_table.txt"
    text_path.write_text(table.render())
    paths.append(text_path)
    optima = {}
    for row in table.rows:
        res = results.get(row.interval)
        entry = {"reference": list(row.reference_pair), "reference_objective": row.non_optimized}
        if res is not None:
            paths.append(
                write_csv(out / f"landscape_r{row.interval:g}.csv", LANDSCAPE_COLUMNS, res.landscape_rows())
            )
            entry.update(
                optimum=[res.best[0], res.best[1]],
                objective=float(res.best[2]),
                multipliers=res.kkt.multipliers.tolist(),
                active=[list(a) for a in res.kkt.active],
                stationarity_residuals=res.kkt.stationarity_residuals.tolist(),
                slackness_passed=res.slackness.passed,
                hessian_psd=None if res.hessian is None else res.hessian.psd,
                hessian_eigenvalues=None if res.hessian is None else res.hessian.eigenvalues.tolist(),
            )
        optima[f"{row.interval:g}"] = entry
    opt_path = out / "optima.json"
    opt_path.write_text(json.dumps(optima, indent=2, sort_keys=True) + "\n")
    paths.append(opt_path)
    _finish(manifest, out, paths)
    sys.stdout.write(table.render())
    return EXIT_OK


def cmd_charts(args) -> int:
    src = Path(args.input or args.out)
    out = Path(args.out)
    landscapes, markers = {}, {}
    optima_path = src / "optima.json"
    optima = json.loads(optima_path.read_text()) if optima_path.is_file() else {}
    for path in sorted(src.glob("landscape_r*.csv")):
        r = float(path.stem[len("landscape_r"):])
        landscapes[r] = read_csv(path)
        entry = optima.get(f"{r:g}", {})
        marks = []
        if "optimum" in entry:
            marks.append(("optimized", *map(float, entry["optimum"])))
        if "reference" in entry:
            marks.append(("non-optimized", *map(float, entry["reference"])))
        markers[r] = marks
    paths = emit_charts(src / "sweep.csv", out, landscapes, markers, args.box_grouping)
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


def cmd_conformance(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = write_conformance(out / "conformance.csv")
    worst = max(rows, key=lambda r: r["abs_diff"])
    sys.stdout.write(
        f"{len(rows)} points; max |numeric - closed| = {worst['abs_diff']:.6g} "
        f"at ell={worst['ell']}, k={worst['k']}, xi_i={worst['xi_i']}, xi_j={worst['xi_j']}\n"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bulletin-queues", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sweep_flags=True):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--out", metavar="DIR", default="out")
        if sweep_flags:
            p.add_argument("--seed", type=int)
            p.add_argument("--replications", type=int)
            p.add_argument("--policy", choices=("on", "off", "both"))
            p.add_argument("--intervals", type=_float_list, metavar="LIST")
            p.add_argument("--lambdas", type=_float_list, metavar="LIST")

    p = sub.add_parser("sweep", help="simulate the (r x lambda x policy) grid")
    common(p)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("optimize", help="optimised vs reference objective per interval")
    common(p)
    p.set_defaults(func=cmd_optimize)
    p = sub.add_parser("charts", help="render SVG charts from a sweep directory")
    p.add_argument("--out", metavar="DIR", default="out")
    p.add_argument("--input", metavar="DIR", help="directory holding sweep.csv (default: --out)")
    p.add_argument("--box-grouping", choices=("pooled", "interval"), default="pooled")
    p.set_defaults(func=cmd_charts)
    p = sub.add_parser("conformance", help="quadrature vs series FSD jockey probabilities")
    p.add_argument("--out", metavar="DIR", default="out")
    p.set_defaults(func=cmd_conformance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (InvalidConfig, MissingInput) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.error("runtime failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
