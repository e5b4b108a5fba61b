"""Deterministic SVG charts for sweep results and objective landscapes.

Every chart is built from plain strings with a fixed viewport and a fixed
element order, so identical inputs give byte-identical files. Plotted
statistics are also written as ``data-*`` attributes for machine checks.
"""

from __future__ import annotations

import math
from html import escape
from pathlib import Path

import numpy as np

from .errors import MissingInput
from .reports import read_csv

WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 70, "right": 150, "top": 50, "bottom": 60}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def _f(x: float) -> str:
    return f"{x:.2f}"


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="28" text-anchor="middle" font-size="16">{escape(title)}</text>',
    ]


def _axes(xlabel: str, ylabel: str, x0, x1, y0, y1) -> list[str]:
    left, top = MARGIN["left"], MARGIN["top"]
    right, bottom = WIDTH - MARGIN["right"], HEIGHT - MARGIN["bottom"]
    out = [
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        f'<text x="{(left + right) / 2:.1f}" y="{HEIGHT - 18}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="18" y="{(top + bottom) / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 18 {(top + bottom) / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        yv = y0 + frac * (y1 - y0)
        py = bottom - frac * (bottom - top)
        out.append(f'<text x="{left - 6}" y="{_f(py + 4)}" text-anchor="end" font-size="10">{yv:.3g}</text>')
    if x0 is not None:
        for frac in (0.0, 0.5, 1.0):
            xv = x0 + frac * (x1 - x0)
            px = left + frac * (right - left)
            out.append(f'<text x="{_f(px)}" y="{bottom + 16}" text-anchor="middle" font-size="10">{xv:.3g}</text>')
    return out


def _scale(lo, hi):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return 0.0, 1.0
    if hi <= lo:
        return lo - 0.5, hi + 0.5
    return lo, hi


def line_chart(title: str, xs, series: dict, xlabel: str, ylabel: str) -> str:
    """One polyline per series over shared x values."""
    xs = [float(x) for x in xs]
    finite = [v for ys in series.values() for v in ys if math.isfinite(v)]
    y0, y1 = _scale(0.0, max(finite) if finite else 1.0)
    x0, x1 = _scale(min(xs), max(xs)) if xs else (0.0, 1.0)
    left, top = MARGIN["left"], MARGIN["top"]
    right, bottom = WIDTH - MARGIN["right"], HEIGHT - MARGIN["bottom"]

    def px(x):
        return left + (x - x0) / (x1 - x0) * (right - left)

    def py(y):
        return bottom - (y - y0) / (y1 - y0) * (bottom - top)

    out = _header(title) + _axes(xlabel, ylabel, x0, x1, y0, y1)
    for n, (name, ys) in enumerate(series.items()):
        color = PALETTE[n % len(PALETTE)]
        pts = [(x, y) for x, y in zip(xs, ys) if math.isfinite(y)]
        path = " ".join(f"{_f(px(x))},{_f(py(y))}" for x, y in pts)
        out.append(f'<g class="series" data-name="{escape(name)}">')
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{path}"/>')
        for x, y in pts:
            out.append(
                f'<circle cx="{_f(px(x))}" cy="{_f(py(y))}" r="3" fill="{color}" '
                f'data-x="{x!r}" data-y="{y!r}"/>'
            )
        out.append("</g>")
        ly = top + 14 + 18 * n
        out.append(f'<rect x="{right + 12}" y="{ly - 9}" width="12" height="12" fill="{color}"/>')
        out.append(f'<text x="{right + 30}" y="{ly + 1}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def box_stats(values) -> dict | None:
    vals = np.sort(np.asarray([v for v in values if math.isfinite(v)], dtype=float))
    if vals.size == 0:
        return None
    q1, med, q3 = np.percentile(vals, [25, 50, 75])
    iqr = q3 - q1
    inside = vals[(vals >= q1 - 1.5 * iqr) & (vals <= q3 + 1.5 * iqr)]
    return {
        "n": int(vals.size),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "lo": float(inside.min()),
        "hi": float(inside.max()),
    }


def box_plot(title: str, groups: list[tuple[str, list[float]]], ylabel: str) -> str:
    stats = [(label, box_stats(vals)) for label, vals in groups]
    finite = [s[k] for _, s in stats if s for k in ("lo", "hi")]
    y0, y1 = _scale(0.0, max(finite) if finite else 1.0)
    left, top = MARGIN["left"], MARGIN["top"]
    right, bottom = WIDTH - MARGIN["right"] + 100, HEIGHT - MARGIN["bottom"]

    def py(y):
        return bottom - (y - y0) / (y1 - y0) * (bottom - top)

    out = _header(title) + _axes("", ylabel, None, None, y0, y1)
    slot = (right - left) / max(1, len(stats))
    for n, (label, s) in enumerate(stats):
        cx = left + slot * (n + 0.5)
        half = min(30.0, slot * 0.3)
        color = PALETTE[n % len(PALETTE)]
        out.append(
            f'<text x="{_f(cx)}" y="{bottom + 16}" text-anchor="middle" font-size="10">{escape(label)}</text>'
        )
        if s is None:
            out.append(f'<g class="box" data-label="{escape(label)}" data-n="0"></g>')
            continue
        out.append(
            f'<g class="box" data-label="{escape(label)}" data-n="{s["n"]}" data-median="{s["median"]!r}" '
            f'data-q1="{s["q1"]!r}" data-q3="{s["q3"]!r}" data-lo="{s["lo"]!r}" data-hi="{s["hi"]!r}">'
        )
        out.append(f'<line x1="{_f(cx)}" y1="{_f(py(s["lo"]))}" x2="{_f(cx)}" y2="{_f(py(s["hi"]))}" stroke="black"/>')
        out.append(
            f'<rect x="{_f(cx - half)}" y="{_f(py(s["q3"]))}" width="{_f(2 * half)}" '
            f'height="{_f(py(s["q1"]) - py(s["q3"]))}" fill="{color}" fill-opacity="0.5" stroke="black"/>'
        )
        out.append(
            f'<line x1="{_f(cx - half)}" y1="{_f(py(s["median"]))}" x2="{_f(cx + half)}" '
            f'y2="{_f(py(s["median"]))}" stroke="black" stroke-width="2"/>'
        )
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(title: str, rows: list[dict], markers: list[tuple[str, float, float]]) -> str:
    """Objective landscape over ``(mu_i, mu_j)`` with labelled markers."""
    mu_i = sorted({float(r["mu_i"]) for r in rows})
    mu_j = sorted({float(r["mu_j"]) for r in rows})
    vals = {
        (float(r["mu_i"]), float(r["mu_j"])): float(r["objective"]) if r["objective"] not in ("", None) else math.nan
        for r in rows
    }
    feas = [math.log(v) for v in vals.values() if math.isfinite(v) and v > 0]
    lo, hi = _scale(min(feas), max(feas)) if feas else (0.0, 1.0)
    left, top = MARGIN["left"], MARGIN["top"]
    right, bottom = WIDTH - MARGIN["right"], HEIGHT - MARGIN["bottom"]
    cw = (right - left) / max(1, len(mu_i))
    ch = (bottom - top) / max(1, len(mu_j))
    out = _header(title) + _axes("mu_i", "mu_j", None, None, mu_j[0] if mu_j else 0, mu_j[-1] if mu_j else 1)
    for a, x in enumerate(mu_i):
        for b, y in enumerate(mu_j):
            v = vals.get((x, y), math.nan)
            if math.isfinite(v) and v > 0:
                t = (math.log(v) - lo) / (hi - lo)
                shade = int(round(255 * (1 - t)))
                fill = f"rgb(255,{shade},{int(round(shade * 0.6))})"
            else:
                fill = "#cccccc"
            out.append(
                f'<rect x="{_f(left + a * cw)}" y="{_f(bottom - (b + 1) * ch)}" width="{_f(cw)}" '
                f'height="{_f(ch)}" fill="{fill}"/>'
            )
    for n, (label, x, y) in enumerate(markers):
        if not (math.isfinite(x) and math.isfinite(y)) or x not in mu_i or y not in mu_j:
            continue
        cx = left + (mu_i.index(x) + 0.5) * cw
        cy = bottom - (mu_j.index(y) + 0.5) * ch
        shape = "circle" if n == 0 else "rect"
        if shape == "circle":
            body = f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="6" fill="none" stroke="blue" stroke-width="2"/>'
        else:
            body = f'<rect x="{_f(cx - 5)}" y="{_f(cy - 5)}" width="10" height="10" fill="none" stroke="black" stroke-width="2"/>'
        out.append(f'<g class="marker" data-label="{escape(label)}" data-mu-i="{x!r}" data-mu-j="{y!r}">{body}</g>')
        out.append(f'<text x="{right + 12}" y="{top + 14 + 18 * n}" font-size="11">{escape(label)}: ({x:g}, {y:g})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _num(v: str) -> float:
    return float(v) if v not in ("", None) else math.nan


def load_sweep(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"sweep CSV not found: {path}")
    rows = read_csv(path)
    if not rows:
        raise MissingInput(f"sweep CSV has no rows: {path}")
    return rows


RATE_SERIES = ("renege_rate_fsd", "renege_rate_icd", "jockey_rate_fsd", "jockey_rate_icd")


def rate_charts(rows: list[dict]) -> dict[str, str]:
    out = {}
    cells: dict = {}
    for row in rows:
        key = (_num(row["r"]), row["policy"])
        cells.setdefault(key, {}).setdefault(_num(row["lambda"]), []).append(row)
    for (r, pol), by_lam in sorted(cells.items()):
        lams = sorted(by_lam)
        series = {
            col: [float(np.mean([_num(x[col]) for x in by_lam[lam]])) for lam in lams]
            for col in RATE_SERIES
        }
        out[f"rates_r{r:g}_policy_{pol}.svg"] = line_chart(
            f"Reneging and jockeying rates, r={r:g}s, policy {pol}",
            lams, series, "arrival rate lambda (1/s)", "rate (1/s)",
        )
    return out


def wait_box_groups(rows: list[dict], grouping: str = "pooled") -> list[tuple[str, list[float]]]:
    """Per-replication impatient-wait medians grouped by policy and information model."""
    if grouping not in ("pooled", "interval"):
        raise ValueError("grouping must be 'pooled' or 'interval'")
    groups: dict = {}
    for row in rows:
        for model in ("fsd", "icd"):
            v = _num(row[f"wait_median_impatient_{model}"])
            if grouping == "pooled":
                key = (row["policy"], model.upper())
            else:
                key = (_num(row["r"]), row["policy"], model.upper())
            groups.setdefault(key, []).append(v)
    out = []
    for key in sorted(groups):
        label = " ".join(f"r={k:g}" if isinstance(k, float) else f"policy {k}" if k in ("on", "off") else k for k in key)
        out.append((label, groups[key]))
    return out


def emit_charts(sweep_csv, out_dir, landscapes=None, markers=None, grouping="pooled") -> list[Path]:
    """Write rate line charts, the wait box plot and any landscape heatmaps.

    ``landscapes`` maps interval to landscape rows; ``markers`` maps interval
    to a list of ``(label, mu_i, mu_j)``. Nothing is written when the sweep
    CSV is missing or empty.
    """
    rows = load_sweep(sweep_csv)
    docs = rate_charts(rows)
    docs[f"waits_box_{grouping}.svg"] = box_plot(
        "Median waiting time of impatient requests", wait_box_groups(rows, grouping), "wait (s)"
    )
    for r, land in sorted((landscapes or {}).items()):
        docs[f"landscape_r{r:g}.svg"] = heatmap(
            f"Objective landscape, r={r:g}s", land, (markers or {}).get(r, [])
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in sorted(docs):
        p = out_dir / name
        p.write_text(docs[name])
        paths.append(p)
    return paths
