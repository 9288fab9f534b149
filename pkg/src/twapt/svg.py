"""Minimal SVG line charts, regenerable from the CSV outputs."""
from __future__ import annotations

import csv
import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]
W, H = 640, 420
ML, MR, MT, MB = 70, 160, 40, 55


def _ticks(lo, hi, n=5):
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def line_chart(x, series, title="", xlabel="", ylabel="", styles=None):
    """Return SVG text for series {label: y} over a shared x."""
    x = np.asarray(x, float)
    ys = {k: np.asarray(v, float) for k, v in series.items()}
    allv = np.concatenate([v[np.isfinite(v)] for v in ys.values()] or [np.zeros(1)])
    y0, y1 = (float(allv.min()), float(allv.max())) if allv.size else (0.0, 1.0)
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    x0, x1 = float(x.min()), float(x.max())
    if x1 <= x0:
        x1 = x0 + 1.0
    pw, ph = W - ML - MR, H - MT - MB

    def sx(v):
        return ML + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MT + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        px = sx(t)
        out.append(f'<line x1="{px:.2f}" y1="{MT + ph}" x2="{px:.2f}" y2="{MT + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px:.2f}" y="{MT + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        py = sy(t)
        out.append(f'<line x1="{ML - 5}" y1="{py:.2f}" x2="{ML}" y2="{py:.2f}" stroke="black"/>')
        out.append(f'<text x="{ML - 8}" y="{py + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{ML + pw / 2}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MT + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MT + ph / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{ML + pw / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    styles = styles or {}
    for i, (label, y) in enumerate(ys.items()):
        color = PALETTE[i % len(PALETTE)]
        ok = np.isfinite(y)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[ok], y[ok]))
        dash = ' stroke-dasharray="5,3"' if styles.get(label) == "dashed" else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        ly = MT + 14 + 16 * i
        out.append(f'<line x1="{W - MR + 10}" y1="{ly - 4}" x2="{W - MR + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{W - MR + 35}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(head)))
    return {h: data[:, i] for i, h in enumerate(head)}


def plot_csv(csv_path, svg_path, x_col, y_cols, title="", xlabel="", ylabel="", styles=None):
    """Render columns of a CSV file to an SVG line chart."""
    cols = read_csv(csv_path)
    svg = line_chart(cols[x_col], {c: cols[c] for c in y_cols if c in cols},
                     title, xlabel or x_col, ylabel, styles)
    with open(svg_path, "w") as fh:
        fh.write(svg)
    return svg_path
