"""Static SVG line charts: history, observed test window and forecasts.

Hand-written SVG with fixed-precision coordinates, so identical inputs give
identical bytes.
"""

from __future__ import annotations

from typing import Mapping
from xml.sax.saxutils import escape

import numpy as np

from .series import Month, TimeSeries

WIDTH, HEIGHT = 900, 420
MARGIN = (60, 20, 30, 70)  # left, right, top, bottom
PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(title: str, observed: TimeSeries, train_end: Month,
               predictions: Mapping[str, TimeSeries]) -> str:
    """Observed series as a solid line, each prediction as a dashed one.

    Args:
        title: Chart heading.
        observed: Full observed series (history plus test window).
        train_end: Last training month; a vertical rule marks the split.
        predictions: Method name to forecast series.
    """
    first = observed.start
    last = observed.end
    for s in predictions.values():
        last = max(last, s.end)
    span = max(last - first, 1)
    vals = [observed.values[np.isfinite(observed.values)]]
    vals += [s.values[np.isfinite(s.values)] for s in predictions.values()]
    allv = np.concatenate(vals) if vals else np.zeros(1)
    lo, hi = (float(allv.min()), float(allv.max())) if allv.size else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def xy(month: Month, v: float) -> str:
        x = left + pw * (month - first) / span
        y = top + ph * (hi - v) / (hi - lo)
        return f"{_fmt(x)},{_fmt(y)}"

    def path(series: TimeSeries) -> str:
        pts = [xy(m, v) for m, v in zip(series.months(), series.values) if np.isfinite(v)]
        return " ".join(pts)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="18" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for i in range(5):
        v = lo + (hi - lo) * i / 4
        y = top + ph * (hi - v) / (hi - lo)
        out.append(f'<text x="{left - 6}" y="{_fmt(y + 4)}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{v:.1f}</text>')
    # month labels: every January over the history, every month over the test window
    for k in range(span + 1):
        m = first + k
        if m > train_end or m.month == 1:
            x = left + pw * k / span
            out.append(f'<text x="{_fmt(x)}" y="{top + ph + 12}" font-family="sans-serif" font-size="9" '
                       f'transform="rotate(60 {_fmt(x)} {top + ph + 12})">{m}</text>')
    sx = left + pw * (train_end - first) / span
    out.append(f'<line x1="{_fmt(sx)}" y1="{top}" x2="{_fmt(sx)}" y2="{top + ph}" '
               'stroke="#888888" stroke-dasharray="2,3"/>')
    out.append(f'<polyline fill="none" stroke="black" stroke-width="1.5" points="{path(observed)}"/>')
    legend = [("observed", "black", None)]
    for i, (name, s) in enumerate(predictions.items()):
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'stroke-dasharray="6,4" points="{path(s)}"/>')
        legend.append((name, color, "6,4"))
    for i, (name, color, dash) in enumerate(legend):
        y = top + 12 + 14 * i
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<line x1="{left + 10}" y1="{y}" x2="{left + 34}" y2="{y}" stroke="{color}"{extra}/>')
        out.append(f'<text x="{left + 40}" y="{y + 4}" font-family="sans-serif" '
                   f'font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
