"""Minimal self-contained SVG line/scatter plots."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


@dataclass
class Series:
    x: Sequence[float]
    y: Sequence[float]
    label: str = ""
    style: str = "line"  # "line" or "points"
    color: Optional[str] = None


@dataclass
class Panel:
    series: list = field(default_factory=list)
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logy: bool = False


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    return [first + i * step for i in range(int((hi - first) / step + 1e-9) + 1)]


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _panel_svg(panel: Panel, x0: float, y0: float, w: float, h: float) -> list:
    out = []
    xs = np.concatenate([np.asarray(s.x, float) for s in panel.series])
    ys = np.concatenate([np.asarray(s.y, float) for s in panel.series])
    if panel.logy:
        ys = ys[ys > 0]
        ys = np.log10(ys) if ys.size else np.array([0.0, 1.0])
    xlo, xhi = float(np.min(xs)), float(np.max(xs))
    ylo, yhi = float(np.min(ys)), float(np.max(ys))
    if xhi == xlo:
        xhi = xlo + 1.0
    pad = 0.05 * (yhi - ylo or 1.0)
    ylo, yhi = ylo - pad, yhi + pad
    left, bottom = x0 + 60, y0 + h - 40
    pw, ph = w - 80, h - 70

    def px(x):
        return left + (x - xlo) / (xhi - xlo) * pw

    def py(y):
        return bottom - (y - ylo) / (yhi - ylo) * ph

    out.append(f'<rect x="{left:.1f}" y="{bottom - ph:.1f}" width="{pw:.1f}" height="{ph:.1f}" fill="none" stroke="#000"/>')
    for t in _ticks(xlo, xhi):
        out.append(f'<line x1="{px(t):.1f}" y1="{bottom:.1f}" x2="{px(t):.1f}" y2="{bottom + 4:.1f}" stroke="#000"/>')
        out.append(f'<text x="{px(t):.1f}" y="{bottom + 16:.1f}" font-size="10" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(ylo, yhi):
        label = _fmt(10**t) if panel.logy else _fmt(t)
        out.append(f'<line x1="{left - 4:.1f}" y1="{py(t):.1f}" x2="{left:.1f}" y2="{py(t):.1f}" stroke="#000"/>')
        out.append(f'<text x="{left - 6:.1f}" y="{py(t) + 3:.1f}" font-size="10" text-anchor="end">{label}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{y0 + 16:.1f}" font-size="12" text-anchor="middle">{escape(panel.title)}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{bottom + 32:.1f}" font-size="11" text-anchor="middle">{escape(panel.xlabel)}</text>')
    out.append(
        f'<text x="{x0 + 14:.1f}" y="{bottom - ph / 2:.1f}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 {x0 + 14:.1f} {bottom - ph / 2:.1f})">{escape(panel.ylabel)}</text>'
    )
    for i, s in enumerate(panel.series):
        color = s.color or COLORS[i % len(COLORS)]
        x = np.asarray(s.x, float)
        y = np.asarray(s.y, float)
        if panel.logy:
            keep = y > 0
            x, y = x[keep], np.log10(y[keep])
        if s.style == "points":
            for a, b in zip(x, y):
                out.append(f'<circle cx="{px(a):.1f}" cy="{py(b):.1f}" r="2" fill="{color}"/>')
        else:
            pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, y))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>')
        if s.label:
            ly = bottom - ph + 14 + 14 * i
            out.append(f'<text x="{left + pw - 6:.1f}" y="{ly:.1f}" font-size="10" text-anchor="end" fill="{color}">{escape(s.label)}</text>')
    return out


def render(panels: Sequence[Panel], ncols: int = 1, width: float = 480, height: float = 300) -> str:
    """SVG document with ``panels`` laid out on a grid."""
    if not panels or any(not p.series for p in panels):
        raise ValueError("nothing to plot")
    nrows = math.ceil(len(panels) / ncols)
    W, H = width * ncols, height * nrows
    body = []
    for k, panel in enumerate(panels):
        r, c = divmod(k, ncols)
        body += _panel_svg(panel, c * width, r * height, width, height)
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}" viewBox="0 0 {W:.0f} {H:.0f}" font-family="sans-serif">'
    return "\n".join([head, f'<rect width="{W:.0f}" height="{H:.0f}" fill="white"/>', *body, "</svg>"]) + "\n"
