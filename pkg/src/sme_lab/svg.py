"""Minimal deterministic SVG line charts (fixed canvas, axes, legend, optional bands)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .export import atomic_write_text

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
WIDTH, HEIGHT = 720, 450
MARGIN = dict(left=70, right=160, top=40, bottom=50)


@dataclass
class Series:
    name: str
    x: np.ndarray
    y: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    dashed: bool = False
    step: bool = False


def _num(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    span = hi - lo
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step - 1e-9) * step
    out, v = [], first
    while v <= hi + 1e-9 * step:
        out.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return out


def _label(v: float) -> str:
    if v != 0 and (abs(v) < 1e-3 or abs(v) >= 1e5):
        return f"{v:.1e}"
    return f"{v:.6g}"


def chart_svg(series: list[Series], title: str = "", xlabel: str = "", ylabel: str = "",
              logy: bool = False) -> str:
    """Render the chart; identical inputs give identical bytes."""
    if not series:
        raise ValueError("chart needs at least one series")
    for s in series:
        if len(s.x) == 0 or len(s.x) != len(s.y):
            raise ValueError(f"series {s.name!r} is empty or has mismatched x/y")
    tf = (lambda v: np.log10(np.maximum(v, 1e-300))) if logy else (lambda v: np.asarray(v, float))
    xs = np.concatenate([np.asarray(s.x, float) for s in series])
    ys = np.concatenate([tf(s.y) for s in series]
                        + [tf(b) for s in series for b in (s.lo, s.hi) if b is not None])
    ys = ys[np.isfinite(ys)]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = 0.5 * abs(y0) if y0 else 0.5
        y0, y1 = y0 - pad, y1 + pad
    else:
        pad = 0.05 * (y1 - y0)
        y0, y1 = y0 - pad, y1 + pad
    L, R, T, B = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def px(v):
        return L + (np.asarray(v, float) - x0) / (x1 - x0) * (R - L)

    def py(v):
        return B - (tf(v) - y0) / (y1 - y0) * (B - T)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH // 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>')
    for v in _ticks(x0, x1):
        X = _num(px(v))
        out.append(f'<line x1="{X}" y1="{B}" x2="{X}" y2="{B + 5}" stroke="black"/>')
        out.append(f'<text x="{X}" y="{B + 18}" text-anchor="middle">{_label(v)}</text>')
    for v in _ticks(y0, y1):
        Y = _num(B - (v - y0) / (y1 - y0) * (B - T))
        lab = _label(10**v) if logy else _label(v)
        out.append(f'<line x1="{L - 5}" y1="{Y}" x2="{R}" y2="{Y}" stroke="#dddddd"/>')
        out.append(f'<text x="{L - 8}" y="{Y}" text-anchor="end" dominant-baseline="middle">{lab}</text>')
    out.append(f'<rect x="{L}" y="{T}" width="{R - L}" height="{B - T}" fill="none" stroke="black"/>')
    if xlabel:
        out.append(f'<text x="{(L + R) // 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{(T + B) // 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {(T + B) // 2})">{escape(ylabel)}</text>')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        X, Y = px(s.x), py(s.y)
        if s.lo is not None and s.hi is not None:
            upper = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(X, py(s.hi)))
            lower = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(X[::-1], py(s.lo)[::-1]))
            out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.18" stroke="none"/>')
        if s.step and len(X) > 1:
            X = np.repeat(X, 2)[1:]
            Y = np.repeat(Y, 2)[:-1]
        pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(X, Y) if np.isfinite(b))
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>')
        ly = T + 16 + 18 * i
        out.append(f'<line x1="{R + 12}" y1="{ly}" x2="{R + 36}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{R + 42}" y="{ly}" dominant-baseline="middle">{escape(s.name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_chart(path, series: list[Series], **kw):
    return atomic_write_text(path, chart_svg(series, **kw))


def mean_band_series(name: str, stats, coord: int = 0, k: float = 2.0, **kw) -> Series:
    m = stats.mean[:, coord]
    se = stats.stderr[:, coord]
    return Series(name, stats.times, m, m - k * se, m + k * se, **kw)
