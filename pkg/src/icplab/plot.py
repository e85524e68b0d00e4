"""Self-contained SVG line charts of aggregated experiment statistics.

Each chart shows the cross-run mean as a polyline with markers over the
grid variable and the interval as a shaded band. Bias charts carry a
dashed zero line, the validity reference.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from icplab.experiment import AGGREGATE_COLUMNS
from icplab.metrics import FORMULA_SD, FORMULA_SE, STATISTICS


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class PlotSpec:
    statistic: str
    x_axis: str
    series: tuple        # epsilons to draw, one file each
    output: Path
    formula_id: str = FORMULA_SE

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}")


W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 72, 24, 48, 56


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + step * 1e-9, step)]


def render_svg(x, mean, lo, hi, title, xlabel, ylabel, zero_line=False) -> str:
    x, mean, lo, hi = (np.asarray(v, dtype=float) for v in (x, mean, lo, hi))
    xmin, xmax = float(x.min()), float(x.max())
    if xmin == xmax:
        xmin, xmax = xmin - 1, xmax + 1
    ys = np.concatenate([lo, hi] + ([np.zeros(1)] if zero_line else []))
    ymin, ymax = float(ys.min()), float(ys.max())
    pad = 0.05 * (ymax - ymin) if ymax > ymin else max(abs(ymax) * 0.05, 0.01)
    ymin, ymax = ymin - pad, ymax + pad

    def px(v):
        return LEFT + (v - xmin) / (xmax - xmin) * (W - LEFT - RIGHT)

    def py(v):
        return H - BOTTOM - (v - ymin) / (ymax - ymin) * (H - TOP - BOTTOM)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2:.1f}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>']
    x0, x1, y0, y1 = LEFT, W - RIGHT, H - BOTTOM, TOP
    out.append(f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
    out.append(f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
    for t in _ticks(xmin, xmax):
        out.append(f'<line class="tick" x1="{px(t):.2f}" y1="{y0}" x2="{px(t):.2f}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{y0 + 19}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(ymin, ymax):
        out.append(f'<line class="tick" x1="{x0 - 5}" y1="{py(t):.2f}" x2="{x0}" y2="{py(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{py(t) + 4:.2f}" text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{H - 14}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text transform="translate(18,{(y0 + y1) / 2:.1f}) rotate(-90)" '
               f'text-anchor="middle">{escape(ylabel)}</text>')
    if zero_line:
        out.append(f'<line class="zero-line" x1="{x0}" y1="{py(0):.2f}" x2="{x1}" y2="{py(0):.2f}" '
                   'stroke="grey" stroke-dasharray="6,4"/>')
    band = [(px(a), py(b)) for a, b in zip(x, hi)] + [(px(a), py(b)) for a, b in zip(x[::-1], lo[::-1])]
    out.append('<polygon class="ci-band" fill="steelblue" fill-opacity="0.25" stroke="none" points="'
               + " ".join(f"{a:.2f},{b:.2f}" for a, b in band) + '"/>')
    out.append('<polyline class="mean" fill="none" stroke="steelblue" stroke-width="2" points="'
               + " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, mean)) + '"/>')
    for a, b in zip(x, mean):
        out.append(f'<circle class="point" cx="{px(a):.2f}" cy="{py(b):.2f}" r="3.5" fill="steelblue"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_aggregate_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames:
            raise SchemaError(f"{path} is empty")
        absent = set(AGGREGATE_COLUMNS) - set(reader.fieldnames)
        if absent:
            raise SchemaError(f"{path} lacks columns {sorted(absent)}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path} has no data rows")
    return rows


def plot_aggregate(aggregate_csv, statistic: str, out_dir, epsilons=None, formula_id=None) -> list[Path]:
    """Write one SVG per significance level (one in total for ``mean_alpha``)."""
    rows = read_aggregate_csv(aggregate_csv)
    if formula_id is None:
        formula_id = FORMULA_SD if statistic == "mean_alpha" else FORMULA_SE
    spec_rows = [r for r in rows if r["statistic"] == statistic and r["formula_id"] == formula_id]
    if not spec_rows:
        raise SchemaError(f"no rows for statistic {statistic!r} with formula {formula_id!r}")
    available = list(dict.fromkeys(float(r["epsilon"]) for r in spec_rows))
    if epsilons is None:
        epsilons = available[:1] if statistic == "mean_alpha" else available
    protocol = spec_rows[0]["protocol"]
    grid_variable = spec_rows[0]["grid_variable"]
    selections = []
    for eps in epsilons:
        sel = sorted((r for r in spec_rows if float(r["epsilon"]) == float(eps)),
                     key=lambda r: int(r["grid_value"]))
        if not sel:
            raise SchemaError(f"no rows at epsilon {eps}")
        selections.append((eps, sel))
    # nothing is written unless every requested chart can be drawn
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for eps, sel in selections:
        x = [int(r["grid_value"]) for r in sel]
        cols = [[float(r[c]) for r in sel] for c in ("mean", "ci_low", "ci_high")]
        if statistic == "mean_alpha":
            title = f"Experiment {protocol}: mean calibration conformity score"
            name = f"{protocol}_mean_alpha.svg"
        else:
            title = f"Experiment {protocol}: {statistic}, confidence {1 - float(eps):.6g}"
            name = f"{protocol}_{statistic}_eps{float(eps):g}.svg"
        spec = PlotSpec(statistic, grid_variable, (float(eps),), out / name, formula_id)
        svg = render_svg(x, *cols, title=title, xlabel=grid_variable,
                         ylabel=f"{statistic} ({formula_id})", zero_line=statistic == "bias")
        spec.output.write_text(svg)
        written.append(spec.output)
    return written
