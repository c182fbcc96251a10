"""Static SVG rendering: UAR-versus-round line charts and spectrogram heatmaps.

Output is plain hand-written SVG so a fixed input always produces the same bytes.
"""

from collections import OrderedDict
from xml.sax.saxutils import escape

import numpy as np

from .metrics import read_run_log

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
DASHES = {"original": "", "randomised": "6,3", "adversarial": "2,2", "randomised_adversarial": "8,3,2,3"}


def _fmt(v):
    return f"{v:.2f}"


def series_from_rows(rows):
    """Group run-log rows into ``{(condition, attack): [(round, uar), ...]}`` in first-seen order."""
    series = OrderedDict()
    for r in rows:
        if not 0.0 <= r["uar"] <= 1.0:
            raise ValueError(f"UAR {r['uar']} outside [0, 1] at round {r['round']}")
        series.setdefault((r["condition"], r["attack"]), []).append((r["round"], r["uar"]))
    return series


def line_chart_svg(series, title="UAR per evaluation round", width=720, height=420):
    if not series:
        raise ValueError("nothing to plot: the run log has no rows")
    left, right, top, bottom = 60, 230, 40, 50
    pw, ph = width - left - right, height - top - bottom
    rounds = sorted({r for pts in series.values() for r, _ in pts})
    r_lo, r_hi = rounds[0], rounds[-1]
    span = max(r_hi - r_lo, 1)
    x = lambda r: left + (pw * (r - r_lo) / span if r_hi > r_lo else pw / 2)
    y = lambda u: top + ph * (1.0 - u)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2:.2f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for i in range(6):
        u = i / 5
        out.append(f'<line x1="{left}" y1="{_fmt(y(u))}" x2="{left + pw}" y2="{_fmt(y(u))}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{_fmt(y(u) + 4)}" text-anchor="end">{u:.1f}</text>')
    for r in rounds:
        out.append(f'<text x="{_fmt(x(r))}" y="{top + ph + 18}" text-anchor="middle">{r}</text>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">round</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.2f})">UAR</text>')
    attacks = list(OrderedDict.fromkeys(a for _, a in series))
    for i, ((cond, attack), pts) in enumerate(series.items()):
        colour = PALETTE[attacks.index(attack) % len(PALETTE)]
        dash = DASHES.get(cond, "")
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        coords = " ".join(f"{_fmt(x(r))},{_fmt(y(u))}" for r, u in pts)
        label = escape(f"{cond} ({attack})")
        out.append(f'<polyline data-series="{label}" fill="none" stroke="{colour}" stroke-width="2"'
                   f'{dash_attr} points="{coords}"/>')
        for r, u in pts:
            out.append(f'<circle cx="{_fmt(x(r))}" cy="{_fmt(y(u))}" r="3" fill="{colour}"/>')
        ly = top + 14 + 18 * i
        lx = left + pw + 14
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 24}" y2="{ly - 4}" stroke="{colour}" '
                   f'stroke-width="2"{dash_attr}/>')
        out.append(f'<text x="{lx + 30}" y="{ly}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def chart_run_log(log_path, svg_path, title=None):
    """Render a run-log CSV to an SVG file; rejects empty logs and out-of-range values."""
    rows = read_run_log(log_path)
    svg = line_chart_svg(series_from_rows(rows), title or "UAR per evaluation round")
    with open(svg_path, "w") as fh:
        fh.write(svg)
    return svg_path


def _colour(t):
    # white -> dark blue ramp for non-negative data, red/blue diverging handled by caller
    t = float(np.clip(t, 0.0, 1.0))
    r = int(round(255 * (1 - t) + 8 * t))
    g = int(round(255 * (1 - t) + 48 * t))
    b = int(round(255 * (1 - t) + 107 * t))
    return f"#{r:02x}{g:02x}{b:02x}"


def _diverging(t):
    # t in [-1, 1]: blue for negative, red for positive
    t = float(np.clip(t, -1.0, 1.0))
    if t >= 0:
        return f"#ff{int(round(255 * (1 - t))):02x}{int(round(255 * (1 - t))):02x}"
    s = -t
    return f"#{int(round(255 * (1 - s))):02x}{int(round(255 * (1 - s))):02x}ff"


def heatmap_svg(grid, title="", cell=2, diverging=False):
    """Heatmap of a 2-D (time x mel) array; time runs left to right, low mel bins at the bottom."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 3:
        grid = grid[:, :, 0]
    w, h = grid.shape
    top = 24
    width, height = w * cell, h * cell + top
    if diverging:
        scale = np.abs(grid).max() or 1.0
        colours = [[_diverging(v / scale) for v in row] for row in grid]
    else:
        lo, hi = grid.min(), grid.max()
        rng = (hi - lo) or 1.0
        colours = [[_colour((v - lo) / rng) for v in row] for row in grid]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12" shape-rendering="crispEdges">',
           f'<text x="4" y="16">{escape(title)}</text>']
    for i in range(w):
        for j in range(h):
            out.append(f'<rect x="{i * cell}" y="{top + (h - 1 - j) * cell}" width="{cell}" height="{cell}" '
                       f'fill="{colours[i][j]}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
