"""Static SVG charts for generation reports.

Hand-rolled markup: artifacts must be byte-identical across reruns, so no
plotting library (they embed dates and environment-dependent ids).
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

WIDTH, HEIGHT = 640, 360
MARGIN = 48

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f")


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _scale(values: np.ndarray, lo: float, hi: float, out_lo: float,
           out_hi: float) -> np.ndarray:
    span = hi - lo
    if span == 0:
        span = 1.0
    return out_lo + (values - lo) / span * (out_hi - out_lo)


def _polyline(xs: np.ndarray, ys: np.ndarray, color: str) -> str:
    points = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.2" '
            f'points="{points}"/>')


def line_chart_svg(series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
                   title: str, x_label: str, y_label: str) -> str:
    """Multi-series line chart; each entry maps a label to (x, y) arrays."""
    all_x = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    all_y = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    x_lo, x_hi = float(all_x.min()), float(all_x.max())
    y_lo, y_hi = float(all_y.min()), float(all_y.max())
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" '
        f'height="{HEIGHT - 2 * MARGIN}" fill="none" stroke="#cccccc"/>',
    ]
    for tick in np.linspace(y_lo, y_hi, 5):
        y = float(_scale(np.array([tick]), y_lo, y_hi, HEIGHT - MARGIN, MARGIN)[0])
        parts.append(f'<line x1="{MARGIN}" y1="{_fmt(y)}" x2="{WIDTH - MARGIN}" '
                     f'y2="{_fmt(y)}" stroke="#eeeeee"/>')
        parts.append(f'<text x="{MARGIN - 6}" y="{_fmt(y + 4)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{tick:.4g}</text>')
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        xs = _scale(np.asarray(xs, float), x_lo, x_hi, MARGIN, WIDTH - MARGIN)
        ys = _scale(np.asarray(ys, float), y_lo, y_hi, HEIGHT - MARGIN, MARGIN)
        parts.append(_polyline(xs, ys, color))
        parts.append(f'<text x="{WIDTH - MARGIN - 4}" y="{MARGIN + 14 + 14 * i}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="11" '
                     f'fill="{color}">{label}</text>')
    parts.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="11">{x_label}</text>')
    parts.append(f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="11" '
                 f'transform="rotate(-90 14 {HEIGHT / 2})">{y_label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def density_chart_svg(samples: Mapping[str, Sequence[float]], title: str,
                      x_label: str, bins: int = 40) -> str:
    """Histogram densities as step polylines over a shared support."""
    pooled = np.concatenate([np.asarray(v, float) for v in samples.values()])
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    series = {}
    for label, values in samples.items():
        counts, _ = np.histogram(np.asarray(values, float), bins=edges, density=True)
        series[label] = (centers, counts)
    return line_chart_svg(series, title, x_label, "density")


def write_svg(path: str | Path, markup: str) -> None:
    Path(path).write_text(markup + "\n", encoding="utf-8")
