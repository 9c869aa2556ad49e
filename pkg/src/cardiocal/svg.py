"""Minimal SVG figures: line plots with axes and legend, and labelled heatmaps."""

from __future__ import annotations

import math
from html import escape

import numpy as np

WIDTH, HEIGHT = 800, 600
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def _ticks(lo, hi, n=6):
    """Round tick positions covering ``[lo, hi]``."""
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def _fmt(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.0e}"
    return f"{v:g}"


def _doc(body, title=None):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">')
    parts = [head, f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        parts.append(f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="16">'
                     f'{escape(title)}</text>')
    parts += body
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def line_plot(series, xlabel="", ylabel="", title=None, logy=False,
              margins=(70, 30, 50, 60)):
    """SVG text for ``series = [(label, x, y), ...]``.

    ``margins`` are (left, right, top, bottom) in pixels.
    """
    left, right, top, bottom = margins
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    xs = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    if logy:
        ys = ys[ys > 0]
        ys = np.log10(ys) if ys.size else np.array([0.0, 1.0])
    ok_x, ok_y = xs[np.isfinite(xs)], ys[np.isfinite(ys)]
    x0, x1 = (ok_x.min(), ok_x.max()) if ok_x.size else (0.0, 1.0)
    y0, y1 = (ok_y.min(), ok_y.max()) if ok_y.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    body = [f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
            f'stroke="black"/>']
    for t in _ticks(x0, x1):
        body.append(f'<line x1="{px(t):.1f}" y1="{top + ph}" x2="{px(t):.1f}" '
                    f'y2="{top + ph + 5}" stroke="black"/>')
        body.append(f'<text x="{px(t):.1f}" y="{top + ph + 18}" text-anchor="middle">'
                    f'{_fmt(t)}</text>')
    if logy:
        yt = [float(k) for k in range(math.ceil(y0), math.floor(y1) + 1)] or [y0, y1]
        ylab = [_fmt(10 ** t) for t in yt]
    else:
        yt = _ticks(y0, y1)
        ylab = [_fmt(t) for t in yt]
    for t, lab in zip(yt, ylab):
        body.append(f'<line x1="{left - 5}" y1="{py(t):.1f}" x2="{left}" y2="{py(t):.1f}" '
                    f'stroke="black"/>')
        body.append(f'<text x="{left - 8}" y="{py(t) + 4:.1f}" text-anchor="end">{lab}</text>')
    body.append(f'<text x="{left + pw / 2}" y="{HEIGHT - 15}" text-anchor="middle">'
                f'{escape(xlabel)}</text>')
    body.append(f'<text x="18" y="{top + ph / 2}" text-anchor="middle" '
                f'transform="rotate(-90 18 {top + ph / 2})">{escape(ylabel)}</text>')
    for k, (label, x, y) in enumerate(series):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if logy:
            with np.errstate(divide="ignore", invalid="ignore"):
                y = np.where(y > 0, np.log10(y), np.nan)
        keep = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x[keep], y[keep]))
        color = PALETTE[k % len(PALETTE)]
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                    f'stroke-width="1.5"/>')
        ly = top + 15 + 18 * k
        body.append(f'<line x1="{left + pw - 150}" y1="{ly}" x2="{left + pw - 125}" y2="{ly}" '
                    f'stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{left + pw - 120}" y="{ly + 4}">{escape(str(label))}</text>')
    return _doc(body, title)


def heatmap(values, row_labels, col_labels, title=None, vmin=0.0, vmax=1.0):
    """SVG text of a labelled matrix, white (vmin) to dark blue (vmax)."""
    values = np.asarray(values, dtype=float)
    nr, nc = values.shape
    left, top, right, bottom = 90, 50, 110, 110
    cw = (WIDTH - left - right) / nc
    ch = (HEIGHT - top - bottom) / nr
    body = []
    for i in range(nr):
        body.append(f'<text x="{left - 4}" y="{top + (i + 0.5) * ch + 4:.1f}" '
                    f'text-anchor="end" font-size="{min(11, ch):.0f}">'
                    f'{escape(row_labels[i])}</text>')
        for j in range(nc):
            v = values[i, j]
            f = 0.0 if not np.isfinite(v) else min(max((v - vmin) / (vmax - vmin), 0.0), 1.0)
            r, g, b = (int(255 - f * (255 - c)) for c in (8, 48, 107))
            body.append(f'<rect x="{left + j * cw:.1f}" y="{top + i * ch:.1f}" '
                        f'width="{cw:.1f}" height="{ch:.1f}" fill="rgb({r},{g},{b})">'
                        f'<title>{escape(row_labels[i])} / {escape(col_labels[j])}: '
                        f'{v:.3f}</title></rect>')
    for j in range(nc):
        x = left + (j + 0.5) * cw
        y = top + nr * ch + 8
        body.append(f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="end" '
                    f'transform="rotate(-60 {x:.1f} {y:.1f})">{escape(col_labels[j])}</text>')
    # colour bar
    bx, by, bh = WIDTH - right + 30, top, HEIGHT - top - bottom
    for k in range(50):
        f = 1 - k / 49
        r, g, b = (int(255 - f * (255 - c)) for c in (8, 48, 107))
        body.append(f'<rect x="{bx}" y="{by + k * bh / 50:.1f}" width="20" '
                    f'height="{bh / 50 + 0.5:.1f}" fill="rgb({r},{g},{b})"/>')
    body.append(f'<text x="{bx + 25}" y="{by + 10}">{_fmt(vmax)}</text>')
    body.append(f'<text x="{bx + 25}" y="{by + bh}">{_fmt(vmin)}</text>')
    return _doc(body, title)


def bar_chart(groups, series, ylabel="", title=None, logy=False):
    """Grouped bars: ``series = [(label, values_per_group), ...]``."""
    left, right, top, bottom = 70, 30, 50, 60
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    vals = np.array([np.asarray(v, dtype=float) for _, v in series])
    finite = vals[np.isfinite(vals)]
    if logy:
        finite = np.log10(finite[finite > 0])
    y0 = float(finite.min()) - 0.5 if logy and finite.size else 0.0
    y1 = float(finite.max()) if finite.size else 1.0
    if y1 <= y0:
        y1 = y0 + 1.0
    y1 += 0.05 * (y1 - y0)

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    body = [f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
            f'stroke="black"/>']
    yt = ([float(k) for k in range(math.ceil(y0), math.floor(y1) + 1)] if logy
          else _ticks(y0, y1))
    for t in yt:
        lab = _fmt(10 ** t) if logy else _fmt(t)
        body.append(f'<line x1="{left - 5}" y1="{py(t):.1f}" x2="{left}" y2="{py(t):.1f}" '
                    f'stroke="black"/>')
        body.append(f'<text x="{left - 8}" y="{py(t) + 4:.1f}" text-anchor="end">{lab}</text>')
    ng, ns = len(groups), len(series)
    gw = pw / max(ng, 1)
    bw = 0.8 * gw / max(ns, 1)
    for g, name in enumerate(groups):
        body.append(f'<text x="{left + (g + 0.5) * gw:.1f}" y="{top + ph + 18}" '
                    f'text-anchor="middle">{escape(str(name))}</text>')
        for k in range(ns):
            v = vals[k, g]
            if not np.isfinite(v) or (logy and v <= 0):
                continue
            h = np.log10(v) if logy else v
            x = left + g * gw + 0.1 * gw + k * bw
            body.append(f'<rect x="{x:.1f}" y="{py(h):.1f}" width="{bw:.1f}" '
                        f'height="{py(y0) - py(h):.1f}" fill="{PALETTE[k % len(PALETTE)]}"/>')
    for k, (label, _) in enumerate(series):
        ly = top + 15 + 18 * k
        body.append(f'<rect x="{left + pw - 150}" y="{ly - 6}" width="20" height="10" '
                    f'fill="{PALETTE[k % len(PALETTE)]}"/>')
        body.append(f'<text x="{left + pw - 125}" y="{ly + 4}">{escape(str(label))}</text>')
    body.append(f'<text x="18" y="{top + ph / 2}" text-anchor="middle" '
                f'transform="rotate(-90 18 {top + ph / 2})">{escape(ylabel)}</text>')
    return _doc(body, title)


def write(path, text):
    from .io import atomic_write
    atomic_write(path, text)
