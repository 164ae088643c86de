"""Minimal standalone SVG writers for heatmaps and line plots."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

_PALETTE = [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)]


def _color(x):
    if not math.isfinite(x):
        return "#dddddd"
    x = min(max(x, 0.0), 1.0) * (len(_PALETTE) - 1)
    i = min(int(x), len(_PALETTE) - 2)
    f = x - i
    c = [round(a + (b - a) * f) for a, b in zip(_PALETTE[i], _PALETTE[i + 1])]
    return "#%02x%02x%02x" % tuple(c)


def heatmap_svg(grid, path, title="", xlabels=None, ylabels=None, vmin=None, vmax=None, cell=24):
    """Write a 2-D array as an SVG heatmap; NaN cells are drawn grey."""
    grid = np.asarray(grid, dtype=float)
    ny, nx = grid.shape
    finite = grid[np.isfinite(grid)]
    lo = float(finite.min()) if vmin is None and finite.size else (vmin or 0.0)
    hi = float(finite.max()) if vmax is None and finite.size else (vmax if vmax is not None else 1.0)
    span = hi - lo if hi > lo else 1.0
    left, top = 60, 30
    width, height = left + nx * cell + 80, top + ny * cell + 40
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<text x="{left}" y="18" font-size="13" font-family="sans-serif">{escape(title)}</text>']
    for j in range(ny):
        for i in range(nx):
            v = grid[j, i]
            out.append(f'<rect x="{left + i * cell}" y="{top + j * cell}" width="{cell}" '
                       f'height="{cell}" fill="{_color((v - lo) / span)}"><title>{v:.4g}</title></rect>')
    if xlabels is not None:
        for i, lab in enumerate(xlabels):
            out.append(f'<text x="{left + i * cell + cell / 2}" y="{top + ny * cell + 14}" font-size="9" '
                       f'text-anchor="middle" font-family="sans-serif">{escape(str(lab))}</text>')
    if ylabels is not None:
        for j, lab in enumerate(ylabels):
            out.append(f'<text x="{left - 4}" y="{top + j * cell + cell * 0.65}" font-size="9" '
                       f'text-anchor="end" font-family="sans-serif">{escape(str(lab))}</text>')
    out.append(f'<text x="{left + nx * cell + 8}" y="{top + 10}" font-size="10" '
               f'font-family="sans-serif">max {hi:.3g}</text>')
    out.append(f'<text x="{left + nx * cell + 8}" y="{top + ny * cell}" font-size="10" '
               f'font-family="sans-serif">min {lo:.3g}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))


def line_plot_svg(series: dict, path, title="", logy=True, width=520, height=320, marks=None):
    """Write named y-series (sharing an implicit 0..n-1 x axis) as polylines.

    ``marks`` maps a series name to x positions highlighted with dots.
    """
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
    left, right, top, bottom = 60, 20, 30, 40
    ys = [np.asarray(v, dtype=float) for v in series.values() if len(v)]
    vals = np.concatenate(ys) if ys else np.array([1.0])
    vals = vals[np.isfinite(vals) & ((vals > 0) if logy else True)]
    if vals.size == 0:
        vals = np.array([1.0])
    tf = (lambda v: math.log10(v)) if logy else (lambda v: v)
    lo, hi = tf(vals.min()), tf(vals.max())
    if hi <= lo:
        hi = lo + 1.0
    n = max((len(v) for v in series.values()), default=1)
    pw, ph = width - left - right, height - top - bottom

    def xy(i, v):
        return left + pw * (i / max(n - 1, 1)), top + ph * (1 - (tf(v) - lo) / (hi - lo))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<text x="{left}" y="18" font-size="13" font-family="sans-serif">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>']
    for k, (name, v) in enumerate(series.items()):
        c = colors[k % len(colors)]
        pts = [xy(i, x) for i, x in enumerate(v) if math.isfinite(x) and (x > 0 or not logy)]
        if pts:
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="'
                       + " ".join(f"{a:.1f},{b:.1f}" for a, b in pts) + '"/>')
        out.append(f'<text x="{left + 8}" y="{top + 14 + 14 * k}" font-size="11" fill="{c}" '
                   f'font-family="sans-serif">{escape(name)}</text>')
        for i in (marks or {}).get(name, []):
            if 0 <= i < len(v) and math.isfinite(v[i]) and (v[i] > 0 or not logy):
                a, b = xy(i, v[i])
                out.append(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="2.5" fill="{c}"/>')
    lab = (lambda e: f"1e{e:.1f}") if logy else (lambda e: f"{e:.3g}")
    out.append(f'<text x="{left - 4}" y="{top + 10}" font-size="10" text-anchor="end" '
               f'font-family="sans-serif">{lab(hi)}</text>')
    out.append(f'<text x="{left - 4}" y="{top + ph}" font-size="10" text-anchor="end" '
               f'font-family="sans-serif">{lab(lo)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" font-size="11" text-anchor="middle" '
               f'font-family="sans-serif">epoch</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))
