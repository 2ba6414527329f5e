"""Tiny dependency-free SVG renderers for run artifacts.

Two chart shapes cover everything the command line emits: loss curves over
steps and a score grid over a two-parameter sweep.  Output is plain SVG text
so artifacts stay diffable and render anywhere.
"""

import numpy as np

from .fileio import atomic_write_text

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

WIDTH, HEIGHT = 720, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 130, 40, 45


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def line_plot_svg(xs, series: dict, title: str) -> str:
    """Render named series against shared x values; returns SVG text."""
    xs = [float(v) for v in xs]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'font-family="monospace" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B
    all_y = [float(v) for vals in series.values() for v in vals]
    if not xs or not all_y:
        parts.append(f'<text x="{WIDTH / 2}" y="{HEIGHT / 2}" text-anchor="middle">'
                     'no data</text></svg>')
        return "\n".join(parts)
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def px(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    parts.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" '
                 f'height="{plot_h}" fill="none" stroke="#999"/>')
    for frac in (0.0, 0.5, 1.0):
        yv = y_lo + frac * (y_hi - y_lo)
        xv = x_lo + frac * (x_hi - x_lo)
        parts.append(f'<text x="{MARGIN_L - 6}" y="{py(yv) + 4}" text-anchor="end">'
                     f'{_fmt(yv)}</text>')
        parts.append(f'<text x="{px(xv)}" y="{HEIGHT - MARGIN_B + 16}" '
                     f'text-anchor="middle">{_fmt(xv)}</text>')
    for i, (name, vals) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(x):.1f},{py(float(y)):.1f}" for x, y in zip(xs, vals))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     'stroke-width="1.5"/>')
        ly = MARGIN_T + 14 + 16 * i
        lx = WIDTH - MARGIN_R + 8
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def heatmap_svg(matrix, row_labels, col_labels, title: str,
                row_name: str = "", col_name: str = "") -> str:
    """Render a small numeric grid with per-cell values; returns SVG text."""
    m = np.asarray(matrix, dtype=np.float64)
    rows, cols = m.shape
    cell = 72
    ml, mt = 90, 70
    width = ml + cols * cell + 30
    height = mt + rows * cell + 40
    lo, hi = float(np.nanmin(m)), float(np.nanmax(m))
    span = (hi - lo) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="14">{title}</text>',
    ]
    if col_name:
        parts.append(f'<text x="{ml + cols * cell / 2}" y="{mt - 28}" '
                     f'text-anchor="middle">{col_name}</text>')
    if row_name:
        parts.append(f'<text x="16" y="{mt + rows * cell / 2}" text-anchor="middle" '
                     f'transform="rotate(-90 16 {mt + rows * cell / 2})">{row_name}</text>')
    for j, lab in enumerate(col_labels):
        parts.append(f'<text x="{ml + j * cell + cell / 2}" y="{mt - 8}" '
                     f'text-anchor="middle">{lab}</text>')
    for i, lab in enumerate(row_labels):
        parts.append(f'<text x="{ml - 8}" y="{mt + i * cell + cell / 2 + 4}" '
                     f'text-anchor="end">{lab}</text>')
    for i in range(rows):
        for j in range(cols):
            v = m[i, j]
            t = 0.0 if np.isnan(v) else (v - lo) / span
            # white -> steel blue ramp
            r = int(255 - t * (255 - 31))
            g = int(255 - t * (255 - 119))
            b = int(255 - t * (255 - 180))
            x0, y0 = ml + j * cell, mt + i * cell
            parts.append(f'<rect x="{x0}" y="{y0}" width="{cell}" height="{cell}" '
                         f'fill="rgb({r},{g},{b})" stroke="#999"/>')
            text_fill = "#fff" if t > 0.6 else "#000"
            label = "nan" if np.isnan(v) else f"{v:.3f}"
            parts.append(f'<text x="{x0 + cell / 2}" y="{y0 + cell / 2 + 4}" '
                         f'text-anchor="middle" fill="{text_fill}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def save_svg(path, svg_text: str):
    atomic_write_text(path, svg_text)
