"""Minimal standalone SVG line plots (FOM vs ROM overlays)."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    return np.arange(np.ceil(lo / step) * step, hi + 1e-9 * step, step)


def line_plot(path, t, series: dict[str, np.ndarray], title: str = "", xlabel: str = "t",
              ylabel: str = "", dashed: tuple[str, ...] = (), width: int = 640,
              height: int = 360) -> None:
    """Write a line plot of ``series`` (label -> values over ``t``) as SVG.

    Non-finite samples break the line instead of distorting the axes.
    """
    t = np.asarray(t, dtype=float)
    left, right, top, bottom = 70, 20, 30 if title else 12, 45
    pw, ph = width - left - right, height - top - bottom
    vals = np.concatenate([np.asarray(v, dtype=float)[np.isfinite(v)] for v in series.values()]
                          or [np.zeros(1)])
    if vals.size == 0:
        vals = np.zeros(1)
    ylo, yhi = float(vals.min()), float(vals.max())
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = float(t.min()), float(t.max()) if t.size > 1 else float(t.min()) + 1.0

    def sx(x):
        return left + (x - xlo) / (xhi - xlo) * pw

    def sy(y):
        return top + (1.0 - (y - ylo) / (yhi - ylo)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">'
                   f'{escape(title)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    for xv in _ticks(xlo, xhi):
        out.append(f'<line x1="{sx(xv):.2f}" y1="{top + ph}" x2="{sx(xv):.2f}" y2="{top + ph + 4}" '
                   f'stroke="#333"/><text x="{sx(xv):.2f}" y="{top + ph + 16}" '
                   f'text-anchor="middle">{xv:g}</text>')
    for yv in _ticks(ylo, yhi):
        out.append(f'<line x1="{left - 4}" y1="{sy(yv):.2f}" x2="{left}" y2="{sy(yv):.2f}" '
                   f'stroke="#333"/><text x="{left - 6}" y="{sy(yv) + 4:.2f}" '
                   f'text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 8}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>')
    for idx, (label, values) in enumerate(series.items()):
        color = PALETTE[idx % len(PALETTE)]
        values = np.asarray(values, dtype=float)
        dash = ' stroke-dasharray="6 4"' if label in dashed else ""
        segment = []
        for x, y in zip(t, values):
            if np.isfinite(y):
                segment.append(f"{sx(x):.2f},{sy(y):.2f}")
                continue
            if len(segment) > 1:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} '
                           f'points="{" ".join(segment)}"/>')
            segment = []
        if len(segment) > 1:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} '
                       f'points="{" ".join(segment)}"/>')
        ly = top + 14 + 14 * idx
        out.append(f'<line x1="{left + 10}" y1="{ly - 4}" x2="{left + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"{dash}/>'
                   f'<text x="{left + 35}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
