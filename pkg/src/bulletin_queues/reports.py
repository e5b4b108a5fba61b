"""Tabular outputs: summary tables, landscapes, conformance and sweep CSVs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import NoFeasiblePoint
from .impatience import conformance_rows
from .optimizer import ObjectiveWeights, RateBounds, is_feasible, objective, optimize

CONFORMANCE_COLUMNS = ("ell", "k", "xi_i", "xi_j", "numeric", "closed", "abs_diff")
LANDSCAPE_COLUMNS = ("mu_i", "mu_j", "objective", "feasible")


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row[c] for c in columns]
            writer.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class SummaryRow:
    interval: float
    optimized: float
    non_optimized: float
    optimal_pair: tuple[float, float] | None
    reference_pair: tuple[float, float]
    note: str = ""


@dataclass
class SummaryTable:
    """Optimised vs reference objective per interval; footer derived from rows."""

    rows: list[SummaryRow] = field(default_factory=list)

    def _column(self, name) -> np.ndarray:
        vals = np.array([getattr(r, name) for r in self.rows], dtype=float)
        return vals[~np.isnan(vals)]

    def footer(self) -> dict:
        out = {}
        for name in ("optimized", "non_optimized"):
            col = self._column(name)
            out[name] = {
                "mean": float(np.mean(col)) if col.size else math.nan,
                "std": float(np.std(col)) if col.size else math.nan,
                "min": float(np.min(col)) if col.size else math.nan,
                "max": float(np.max(col)) if col.size else math.nan,
            }
        out["avg_improvement"] = out["non_optimized"]["mean"] - out["optimized"]["mean"]
        return out

    def csv_rows(self):
        for r in self.rows:
            opt = r.optimal_pair or (math.nan, math.nan)
            yield [r.interval, r.optimized, r.non_optimized, opt[0], opt[1],
                   r.reference_pair[0], r.reference_pair[1], r.note]

    columns = ("interval", "opt_obj", "non_opt_obj", "opt_mu_i", "opt_mu_j",
               "non_opt_mu_i", "non_opt_mu_j", "note")

    def render(self) -> str:
        def num(v, width=10):
            return f"{v:>{width}.4f}" if not math.isnan(v) else f"{'n/a':>{width}}"

        def pair(p):
            return f"({p[0]:.2f}, {p[1]:.2f})" if p else "infeasible"

        lines = [f"{'Interval':>8} {'Opt. Obj.':>10} {'Non-Opt.':>10} {'Opt. (mu_i, mu_j)':>18} {'Non-Opt. (mu_i, mu_j)':>22}"]
        for r in self.rows:
            lines.append(
                f"{r.interval:>7g}s {num(r.optimized)} {num(r.non_optimized)} "
                f"{pair(r.optimal_pair):>18} {pair(r.reference_pair):>22}"
                + (f"  {r.note}" if r.note else "")
            )
        f = self.footer()
        for stat in ("mean", "std", "min", "max"):
            lines.append(f"{stat.capitalize():>8} {num(f['optimized'][stat])} {num(f['non_optimized'][stat])}")
        lines.append(f"Avg. improvement: {f['avg_improvement']:.4f}")
        return "\n".join(lines) + "\n"


def build_summary_table(bp, opt_spec, weights: ObjectiveWeights, bounds: RateBounds, intervals):
    """Optimise every interval and score the reference pair; returns table and raw results."""
    table = SummaryTable()
    results = {}
    for r in intervals:
        bp_r = replace(bp, r=float(r))
        ref = opt_spec.references.get(float(r))
        note = []
        try:
            res = optimize(opt_spec.grid, opt_spec.lam_i, opt_spec.lam_j, bp_r, weights, bounds)
            results[float(r)] = res
            best_val, best_pair = float(res.best[2]), (res.best[0], res.best[1])
        except NoFeasiblePoint:
            best_val, best_pair = math.nan, None
            note.append("no feasible point")
        if ref is None:
            ref_val = math.nan
            ref = (math.nan, math.nan)
            note.append("no reference pair")
        elif is_feasible(ref[0], opt_spec.lam_i, bounds) and is_feasible(ref[1], opt_spec.lam_j, bounds):
            ref_val = objective(ref[0], ref[1], opt_spec.lam_i, opt_spec.lam_j, bp_r, weights)
        else:
            ref_val = math.nan
            note.append("reference infeasible")
        table.rows.append(SummaryRow(float(r), best_val, ref_val, best_pair, ref, "; ".join(note)))
    return table, results


def write_conformance(path, **grid) -> list[dict]:
    rows = conformance_rows(**grid)
    write_csv(path, CONFORMANCE_COLUMNS, rows)
    return rows
