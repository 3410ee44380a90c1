"""Minimal line charts written as standalone SVG text."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_chart(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
               width: int = 640, height: int = 400) -> str:
    """One polyline per ``{name: (x, y)}`` entry, with axes, ticks and a legend.

    Output depends only on the inputs, so equal data gives byte-equal files.
    """
    ml, mr, mt, mb = 60, 150, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    xs = [np.asarray(x, dtype=float) for x, _ in series.values()]
    ys = [np.asarray(y, dtype=float) for _, y in series.values()]
    finite_x = np.concatenate([x[np.isfinite(x)] for x in xs]) if xs else np.zeros(0)
    finite_y = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.zeros(0)
    x0, x1 = (finite_x.min(), finite_x.max()) if finite_x.size else (0.0, 1.0)
    y0, y1 = (finite_y.min(), finite_y.max()) if finite_y.size else (0.0, 1.0)
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x0 + 0.5
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y0 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for i in range(5):
        tx = x0 + (x1 - x0) * i / 4
        ty = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{_fmt(px(tx))}" y="{mt + ph + 15}" text-anchor="middle">{tx:.3g}</text>')
        out.append(f'<text x="{ml - 5}" y="{_fmt(py(ty) + 4)}" text-anchor="end">{ty:.3g}</text>')
        out.append(f'<line x1="{ml}" y1="{_fmt(py(ty))}" x2="{ml + pw}" y2="{_fmt(py(ty))}" stroke="#eee"/>')
    if title:
        out.append(f'<text x="{ml + pw / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {mt + ph / 2})">{escape(ylabel)}</text>')
    for k, (name, x, y) in enumerate(zip(series, xs, ys)):
        color = PALETTE[k % len(PALETTE)]
        ok = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = mt + 12 + 16 * k
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly + 4}">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
