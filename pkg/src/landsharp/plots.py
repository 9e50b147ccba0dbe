"""Standalone SVG charts: surface heatmap/contour, scatter with fit, grouped bars.

Output depends only on the input data (no timestamps, fixed float
formatting), so identical inputs give byte-identical files. Drawn elements
carry classes (``cell``, ``contour``, ``point``, ``fit``, ``bar``) so tests
and downstream tools can count them.
"""
from __future__ import annotations

import json
import math
from html import escape
from pathlib import Path

import numpy as np

from .landscape import SurfaceGrid
from .sharpness import linear_fit

KINDS = ("surface-heatmap", "surface-contour", "scatter", "grouped-bars")

_VIRIDIS = [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)]
_SERIES = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
_W, _H = 520, 420
_L, _R, _T, _B = 70, 110, 40, 60


def _color(t: float) -> str:
    if not math.isfinite(t):
        return "#999999"
    t = min(max(t, 0.0), 1.0) * (len(_VIRIDIS) - 1)
    i = min(int(t), len(_VIRIDIS) - 2)
    f = t - i
    rgb = [round(a + (b - a) * f) for a, b in zip(_VIRIDIS[i], _VIRIDIS[i + 1])]
    return "#%02x%02x%02x" % tuple(rgb)


def _num(v: float) -> str:
    return f"{v:.6g}"


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, xlim, ylim):
        self.parts: list[str] = []
        self.xlim, self.ylim = xlim, ylim
        self.meta: dict = {}
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def x(self, v: float) -> float:
        lo, hi = self.xlim
        return _L + (v - lo) / (hi - lo) * (_W - _L - _R)

    def y(self, v: float) -> float:
        lo, hi = self.ylim
        return _H - _B - (v - lo) / (hi - lo) * (_H - _T - _B)

    def add(self, s: str):
        self.parts.append(s)

    def _axes(self) -> list[str]:
        x0, x1, y0, y1 = _L, _W - _R, _T, _H - _B
        out = [f'<rect class="frame" x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" '
               f'fill="none" stroke="#000"/>']
        for k in range(5):
            xv = self.xlim[0] + (self.xlim[1] - self.xlim[0]) * k / 4
            yv = self.ylim[0] + (self.ylim[1] - self.ylim[0]) * k / 4
            out.append(f'<text class="tick" x="{self.x(xv):.2f}" y="{y1 + 16}" '
                       f'text-anchor="middle" font-size="11">{_num(xv)}</text>')
            out.append(f'<text class="tick" x="{x0 - 6}" y="{self.y(yv) + 4:.2f}" '
                       f'text-anchor="end" font-size="11">{_num(yv)}</text>')
        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{_H - 18}" text-anchor="middle" '
                   f'font-size="13">{escape(self.xlabel)}</text>')
        out.append(f'<text x="18" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-size="13" '
                   f'transform="rotate(-90 18 {(y0 + y1) / 2:.1f})">{escape(self.ylabel)}</text>')
        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="24" text-anchor="middle" '
                   f'font-size="14">{escape(self.title)}</text>')
        return out

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
                f'viewBox="0 0 {_W} {_H}">')
        meta = f"<metadata>{escape(json.dumps(self.meta, sort_keys=True))}</metadata>"
        body = [head, meta, f'<rect width="{_W}" height="{_H}" fill="#fff"/>']
        body += self.parts + self._axes() + ["</svg>"]
        return "\n".join(body) + "\n"


def _colorbar(c: _Canvas, lo: float, hi: float):
    x = _W - _R + 20
    steps = 32
    top, bottom = _T, _H - _B
    h = (bottom - top) / steps
    for k in range(steps):
        t = 1 - (k + 0.5) / steps
        c.add(f'<rect class="colorbar" x="{x}" y="{top + k * h:.2f}" width="14" '
              f'height="{h + 0.3:.2f}" fill="{_color(t)}"/>')
    c.add(f'<text x="{x + 18}" y="{top + 8}" font-size="10">{_num(hi)}</text>')
    c.add(f'<text x="{x + 18}" y="{bottom}" font-size="10">{_num(lo)}</text>')


def _edges(v: np.ndarray) -> np.ndarray:
    if len(v) == 1:
        return np.array([v[0] - 0.5, v[0] + 0.5])
    mid = (v[1:] + v[:-1]) / 2
    return np.concatenate([[2 * v[0] - mid[0]], mid, [2 * v[-1] - mid[-1]]])


def _surface_limits(grid: SurfaceGrid):
    finite = grid.losses[np.isfinite(grid.losses)]
    if finite.size == 0:
        return 0.0, 1.0
    lo, hi = float(finite.min()), float(finite.max())
    return lo, hi if hi > lo else lo + 1.0


def surface_heatmap(grid: SurfaceGrid, title: str = "loss surface") -> str:
    ea, eb = _edges(grid.alphas), _edges(grid.betas)
    c = _Canvas(title, "alpha", "beta", (ea[0], ea[-1]), (eb[0], eb[-1]))
    lo, hi = _surface_limits(grid)
    for i in range(len(grid.alphas)):
        for j in range(len(grid.betas)):
            v = grid.losses[i, j]
            x0, x1 = c.x(ea[i]), c.x(ea[i + 1])
            y0, y1 = c.y(eb[j + 1]), c.y(eb[j])
            c.add(f'<rect class="cell" x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0:.2f}" '
                  f'height="{y1 - y0:.2f}" fill="{_color((v - lo) / (hi - lo))}">'
                  f'<title>{_num(grid.alphas[i])},{_num(grid.betas[j])}: {_num(v)}</title></rect>')
    _colorbar(c, lo, hi)
    c.meta = {"kind": "surface-heatmap", "cells": int(grid.losses.size), "min": lo, "max": hi}
    return c.render()


def contour_segments(z: np.ndarray, xs: np.ndarray, ys: np.ndarray, level: float):
    """Marching squares: line segments ((x0, y0), (x1, y1)) where z crosses ``level``.

    ``z[i, j]`` sits at (xs[i], ys[j]); saddle cells are split by the cell mean.
    """
    segs = []

    def interp(p, q, zp, zq):
        t = (level - zp) / (zq - zp)
        return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))

    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            corners = [(xs[i], ys[j]), (xs[i + 1], ys[j]), (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1])]
            vals = [z[i, j], z[i + 1, j], z[i + 1, j + 1], z[i, j + 1]]
            if not all(math.isfinite(v) for v in vals):
                continue
            above = [v >= level for v in vals]
            crossings = []
            for k in range(4):
                a, b = k, (k + 1) % 4
                if above[a] != above[b]:
                    crossings.append(interp(corners[a], corners[b], vals[a], vals[b]))
            if len(crossings) == 2:
                segs.append((crossings[0], crossings[1]))
            elif len(crossings) == 4:
                if (sum(vals) / 4 >= level) == above[0]:
                    segs += [(crossings[0], crossings[1]), (crossings[2], crossings[3])]
                else:
                    segs += [(crossings[3], crossings[0]), (crossings[1], crossings[2])]
    return segs


def surface_contour(grid: SurfaceGrid, levels: int = 12, title: str = "loss contours") -> str:
    c = _Canvas(title, "alpha", "beta", (grid.alphas[0], grid.alphas[-1]),
                (grid.betas[0], grid.betas[-1]))
    lo, hi = _surface_limits(grid)
    values = [lo + (hi - lo) * (k + 0.5) / levels for k in range(levels)]
    for k, level in enumerate(values):
        segs = contour_segments(grid.losses, grid.alphas, grid.betas, level)
        if not segs:
            continue
        d = " ".join(f"M{c.x(p[0]):.2f},{c.y(p[1]):.2f}L{c.x(q[0]):.2f},{c.y(q[1]):.2f}"
                     for p, q in segs)
        c.add(f'<path class="contour" data-level="{_num(level)}" d="{d}" fill="none" '
              f'stroke="{_color((k + 0.5) / levels)}" stroke-width="1.2"/>')
    ci, cj = grid.center_index()
    c.add(f'<circle class="center" cx="{c.x(grid.alphas[ci]):.2f}" cy="{c.y(grid.betas[cj]):.2f}" '
          f'r="3" fill="#000"/>')
    _colorbar(c, lo, hi)
    c.meta = {"kind": "surface-contour", "levels": [float(v) for v in values]}
    return c.render()


def _pad(lo: float, hi: float) -> tuple[float, float]:
    if hi == lo:
        return lo - 1.0, hi + 1.0
    m = 0.05 * (hi - lo)
    return lo - m, hi + m


def scatter(series: dict[str, tuple[list[float], list[float]]], xlabel: str = "mean sharpness",
            ylabel: str = "accuracy", title: str = "sharpness vs. accuracy") -> str:
    """One point set per series plus its least-squares line; fits go into <metadata>."""
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    c = _Canvas(title, xlabel, ylabel, _pad(min(xs_all), max(xs_all)), _pad(min(ys_all), max(ys_all)))
    fits = {}
    for k, (name, (xs, ys)) in enumerate(series.items()):
        col = _SERIES[k % len(_SERIES)]
        for x, y in zip(xs, ys):
            c.add(f'<circle class="point" data-series="{escape(name)}" cx="{c.x(x):.2f}" '
                  f'cy="{c.y(y):.2f}" r="3.5" fill="{col}" fill-opacity="0.8"/>')
        if len(xs) >= 2 and max(xs) > min(xs):
            slope, icpt = linear_fit(xs, ys)
            fits[name] = {"slope": slope, "intercept": icpt}
            x0, x1 = c.xlim
            c.add(f'<line class="fit" data-series="{escape(name)}" x1="{c.x(x0):.2f}" '
                  f'y1="{c.y(slope * x0 + icpt):.2f}" x2="{c.x(x1):.2f}" '
                  f'y2="{c.y(slope * x1 + icpt):.2f}" stroke="{col}" stroke-width="1.5"/>')
        c.add(f'<text x="{_W - _R + 10}" y="{_T + 16 * k + 10}" font-size="11" fill="{col}">'
              f'{escape(name)}</text>')
    c.meta = {"kind": "scatter", "fits": fits}
    return c.render()


def grouped_bars(groups: list[str], metrics: dict[str, list[float]],
                 errors: dict[str, list[float]] | None = None, ylabel: str = "value",
                 title: str = "") -> str:
    """One cluster per group with one bar per metric; optional symmetric error bars."""
    errors = errors or {}
    tops = [v + errors.get(m, [0] * len(vals))[i] for m, vals in metrics.items()
            for i, v in enumerate(vals)]
    lows = [min(0.0, v) for vals in metrics.values() for v in vals]
    c = _Canvas(title, "", ylabel, (0.0, float(len(groups))), _pad(min(lows), max(tops + [0.0])))
    c.ylim = (min(0.0, c.ylim[0]), c.ylim[1])
    width = 0.8 / len(metrics)
    for gi, g in enumerate(groups):
        for mi, (m, vals) in enumerate(metrics.items()):
            v = vals[gi]
            x0 = c.x(gi + 0.1 + mi * width)
            x1 = c.x(gi + 0.1 + (mi + 1) * width)
            ytop, ybase = c.y(max(v, 0.0)), c.y(min(v, 0.0))
            c.add(f'<rect class="bar" data-group="{escape(str(g))}" data-metric="{escape(m)}" '
                  f'x="{x0:.2f}" y="{ytop:.2f}" width="{x1 - x0 - 1:.2f}" height="{ybase - ytop:.2f}" '
                  f'fill="{_SERIES[mi % len(_SERIES)]}"/>')
            if m in errors:
                e = errors[m][gi]
                xm = (x0 + x1) / 2
                c.add(f'<line class="errorbar" x1="{xm:.2f}" y1="{c.y(v - e):.2f}" x2="{xm:.2f}" '
                      f'y2="{c.y(v + e):.2f}" stroke="#000"/>')
        c.add(f'<text x="{c.x(gi + 0.5):.2f}" y="{_H - _B + 30}" text-anchor="middle" '
              f'font-size="10">{escape(str(g))}</text>')
    for mi, m in enumerate(metrics):
        c.add(f'<text x="{_W - _R + 10}" y="{_T + 16 * mi + 10}" font-size="11" '
              f'fill="{_SERIES[mi % len(_SERIES)]}">{escape(m)}</text>')
    c.meta = {"kind": "grouped-bars", "groups": [str(g) for g in groups], "metrics": list(metrics)}
    return c.render()


def emit_plot(kind: str, data, path) -> Path:
    """Render ``data`` as ``kind`` and write it to ``path``.

    surface-heatmap / surface-contour: a SurfaceGrid.
    scatter: {series name: (xs, ys)}.
    grouped-bars: {"groups": [...], "metrics": {name: [...]}, optional "errors", "ylabel", "title"}.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {KINDS}")
    if kind.startswith("surface"):
        if not isinstance(data, SurfaceGrid) or data.losses.size == 0:
            raise ValueError(f"{kind} needs a nonempty SurfaceGrid")
        svg = surface_heatmap(data) if kind == "surface-heatmap" else surface_contour(data)
    elif kind == "scatter":
        if not data or any(len(xs) == 0 or len(xs) != len(ys) for xs, ys in data.values()):
            raise ValueError("scatter needs nonempty series of equal-length x/y lists")
        svg = scatter(data)
    else:
        if not data or not data.get("groups") or not data.get("metrics"):
            raise ValueError("grouped-bars needs nonempty groups and metrics")
        svg = grouped_bars(data["groups"], data["metrics"], data.get("errors"),
                           data.get("ylabel", "value"), data.get("title", ""))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
    return path
