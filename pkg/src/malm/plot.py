"""Dependency-free SVG line plots with a logarithmic y axis."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["svg_plot", "AXIS_LABELS", "METRIC_LABELS"]

AXIS_LABELS = {"iter": "iteration", "grad_evals": "stochastic gradient evaluations",
               "time": "wall-clock time [s]"}
METRIC_LABELS = {"stationarity": "stationarity residual", "feasibility": "feasibility violation"}
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 80, 160, 30, 60


def _abscissa(trace, axis):
    if axis == "iter":
        return trace.column("iter")
    if axis == "grad_evals":
        return trace.column("grad_evals")
    if axis == "time":
        return trace.column("elapsed_ns") * 1e-9
    raise ValueError(f"unknown axis {axis!r}")


def svg_plot(traces, axis="iter", metric="stationarity", labels=None, title=None):
    """Render one polyline per trace; returns SVG 1.1 text.

    Nonpositive values are clamped to a tenth of the smallest positive value
    so they stay visible on the log scale.
    """
    if not traces:
        raise ValueError("nothing to plot")
    if metric not in METRIC_LABELS:
        raise ValueError(f"unknown metric {metric!r}")
    labels = labels or [t.solver for t in traces]
    xs = [_abscissa(t, axis) for t in traces]
    ys = [t.column(metric) for t in traces]
    pos = np.concatenate([y[(y > 0) & np.isfinite(y)] for y in ys] or [np.array([])])
    floor = pos.min() / 10 if pos.size else 1e-16
    ys = [np.where((y > 0) & np.isfinite(y), y, floor) for y in ys]
    lo = math.floor(math.log10(min(y.min() for y in ys)))
    hi = math.ceil(math.log10(max(y.max() for y in ys)))
    if hi == lo:
        lo, hi = lo - 1, hi + 1
    xmin = min(x.min() for x in xs)
    xmax = max(x.max() for x in xs)
    if xmax == xmin:
        xmax = xmin + 1
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + (x - xmin) / (xmax - xmin) * pw

    def py(y):
        return TOP + (hi - math.log10(y)) / (hi - lo) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for e in range(lo, hi + 1):
        y = py(10.0**e)
        out.append(f'<line x1="{LEFT}" y1="{y:.2f}" x2="{LEFT + pw}" y2="{y:.2f}" '
                   'stroke="#dddddd" stroke-width="0.5"/>')
        out.append(f'<text x="{LEFT - 6}" y="{y + 4:.2f}" text-anchor="end">1e{e}</text>')
    for k in range(5):
        xv = xmin + k * (xmax - xmin) / 4
        x = px(xv)
        out.append(f'<line x1="{x:.2f}" y1="{TOP + ph}" x2="{x:.2f}" y2="{TOP + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{TOP + ph + 18}" text-anchor="middle">{xv:.4g}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle">'
               f'{escape(AXIS_LABELS.get(axis, axis))}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2:.2f})">{escape(METRIC_LABELS[metric])}</text>')
    if title:
        out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{TOP - 10}" text-anchor="middle">{escape(title)}</text>')
    for i, (x, y, label) in enumerate(zip(xs, ys, labels)):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = TOP + 14 + 18 * i
        out.append(f'<line x1="{LEFT + pw + 12}" y1="{ly}" x2="{LEFT + pw + 36}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw + 42}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
