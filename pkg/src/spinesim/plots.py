"""A small SVG line-plot writer with no rendering dependencies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


@dataclass(frozen=True)
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    markers: bool = False


@dataclass(frozen=True)
class Plot:
    title: str
    xlabel: str
    ylabel: str
    series: tuple


def _range(values):
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return 0.0, 1.0
    lo, hi = float(finite.min()), float(finite.max())
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo, hi, n=5):
    step = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(step))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= step), default=step)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step) + 1)]


def render(plot: Plot) -> str:
    xs = np.concatenate([np.asarray(s.x, dtype=float) for s in plot.series])
    ys = np.concatenate([np.asarray(s.y, dtype=float) for s in plot.series])
    x0, x1 = _range(xs)
    y0, y1 = _range(ys)
    w, h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def px(v):
        return MARGIN + (v - x0) / (x1 - x0) * w

    def py(v):
        return HEIGHT - MARGIN - (v - y0) / (y1 - y0) * h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{MARGIN}" y="{MARGIN}" width="{w}" height="{h}" fill="none" stroke="#444"/>',
           f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle" font-size="14">{escape(plot.title)}</text>',
           f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(plot.xlabel)}</text>',
           f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" transform="rotate(-90 14 {HEIGHT / 2})">'
           f'{escape(plot.ylabel)}</text>']
    for v in _ticks(x0, x1):
        out.append(f'<line x1="{px(v):.2f}" y1="{HEIGHT - MARGIN}" x2="{px(v):.2f}" y2="{HEIGHT - MARGIN + 4}" stroke="#444"/>')
        out.append(f'<text x="{px(v):.2f}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(y0, y1):
        out.append(f'<line x1="{MARGIN - 4}" y1="{py(v):.2f}" x2="{MARGIN}" y2="{py(v):.2f}" stroke="#444"/>')
        out.append(f'<text x="{MARGIN - 6}" y="{py(v) + 4:.2f}" text-anchor="end">{v:.3g}</text>')
    for k, s in enumerate(plot.series):
        color = PALETTE[k % len(PALETTE)]
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[keep], y[keep]))
        if s.markers:
            for a, b in zip(x[keep], y[keep]):
                out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{color}"/>')
        else:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN + 14 + 14 * k
        out.append(f'<line x1="{WIDTH - MARGIN - 120}" y1="{ly - 4}" x2="{WIDTH - MARGIN - 104}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - MARGIN - 100}" y="{ly}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
