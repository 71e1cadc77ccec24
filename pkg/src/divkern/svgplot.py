"""Minimal static SVG plots: lines, points, error bars, legend.

Outputs are run artifacts for eyeballing tables, written without any
plotting dependency.  Each series is a dict with keys x, y and optional
yerr, label, kind ("line" | "points" | "errorbar") and color.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["render_plot", "write_plot"]

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 64, 16, 34, 46


def _finite(vals):
    a = np.asarray(vals, dtype=float).reshape(-1)
    return a[np.isfinite(a)]


def _nice_ticks(lo, hi, target=5):
    span = hi - lo
    if span <= 0:
        span = max(abs(hi), 1.0)
        lo, hi = lo - 0.5 * span, hi + 0.5 * span
        span = hi - lo
    raw = span / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _fmt(v):
    if v == int(v) and abs(v) < 1e6:
        return str(int(v))
    return f"{v:.4g}"


def render_plot(series, title="", xlabel="", ylabel="") -> str:
    """Render series dicts to an SVG document string."""
    xs = _finite(np.concatenate([np.asarray(s["x"], dtype=float).reshape(-1) for s in series]))
    ys = []
    for s in series:
        y = np.asarray(s["y"], dtype=float).reshape(-1)
        ys.append(y)
        if s.get("yerr") is not None:
            e = np.asarray(s["yerr"], dtype=float).reshape(-1)
            ys.extend([y - e, y + e])
    ys = _finite(np.concatenate(ys)) if ys else np.array([0.0])
    if xs.size == 0 or ys.size == 0:
        xs, ys = np.array([0.0, 1.0]), np.array([0.0, 1.0])

    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    x_pad = 0.04 * (x_hi - x_lo)
    y_pad = 0.06 * (y_hi - y_lo)
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    pw = _W - _ML - _MR
    ph = _H - _MT - _MB

    def px(v):
        return _ML + (v - x_lo) / (x_hi - x_lo) * pw

    def py(v):
        return _MT + (y_hi - v) / (y_hi - y_lo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="#ffffff"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" '
        f'stroke="#444444"/>',
    ]
    for t in _nice_ticks(x_lo, x_hi):
        if not x_lo <= t <= x_hi:
            continue
        parts.append(
            f'<line x1="{px(t):.1f}" y1="{_MT}" x2="{px(t):.1f}" y2="{_MT + ph}" '
            f'stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{px(t):.1f}" y="{_MT + ph + 16}" text-anchor="middle" '
            f'fill="#333333">{_fmt(t)}</text>'
        )
    for t in _nice_ticks(y_lo, y_hi):
        if not y_lo <= t <= y_hi:
            continue
        parts.append(
            f'<line x1="{_ML}" y1="{py(t):.1f}" x2="{_ML + pw}" y2="{py(t):.1f}" '
            f'stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{_ML - 6}" y="{py(t) + 4:.1f}" text-anchor="end" '
            f'fill="#333333">{_fmt(t)}</text>'
        )
    if title:
        parts.append(
            f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14" '
            f'fill="#111111">{title}</text>'
        )
    if xlabel:
        parts.append(
            f'<text x="{_ML + pw / 2}" y="{_H - 10}" text-anchor="middle" '
            f'fill="#111111">{xlabel}</text>'
        )
    if ylabel:
        parts.append(
            f'<text x="16" y="{_MT + ph / 2}" text-anchor="middle" fill="#111111" '
            f'transform="rotate(-90 16 {_MT + ph / 2})">{ylabel}</text>'
        )

    legend_y = _MT + 14
    for i, s in enumerate(series):
        color = s.get("color", _COLORS[i % len(_COLORS)])
        kind = s.get("kind", "line")
        x = np.asarray(s["x"], dtype=float).reshape(-1)
        y = np.asarray(s["y"], dtype=float).reshape(-1)
        keep = np.isfinite(x) & np.isfinite(y)
        if kind == "line":
            pts = " ".join(
                f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x[keep], y[keep])
            )
            if pts:
                parts.append(
                    f'<polyline points="{pts}" fill="none" stroke="{color}" '
                    f'stroke-width="1.6"/>'
                )
        else:
            if s.get("yerr") is not None and kind == "errorbar":
                e = np.asarray(s["yerr"], dtype=float).reshape(-1)
                for a, b, c in zip(x[keep], y[keep], e[keep]):
                    if not np.isfinite(c):
                        continue
                    xa, y1, y2 = px(a), py(b - c), py(b + c)
                    parts.append(
                        f'<line x1="{xa:.1f}" y1="{y1:.1f}" x2="{xa:.1f}" '
                        f'y2="{y2:.1f}" stroke="{color}" stroke-width="1.2"/>'
                    )
                    for yy in (y1, y2):
                        parts.append(
                            f'<line x1="{xa - 3:.1f}" y1="{yy:.1f}" x2="{xa + 3:.1f}" '
                            f'y2="{yy:.1f}" stroke="{color}" stroke-width="1.2"/>'
                        )
            for a, b in zip(x[keep], y[keep]):
                parts.append(
                    f'<circle cx="{px(a):.1f}" cy="{py(b):.1f}" r="2.6" '
                    f'fill="{color}"/>'
                )
        if s.get("label"):
            lx = _ML + pw - 130
            parts.append(
                f'<line x1="{lx}" y1="{legend_y}" x2="{lx + 18}" y2="{legend_y}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
            parts.append(
                f'<text x="{lx + 24}" y="{legend_y + 4}" fill="#111111">'
                f'{s["label"]}</text>'
            )
            legend_y += 16

    parts.append("</svg>")
    return "\n".join(parts)


def write_plot(path, series, title="", xlabel="", ylabel=""):
    svg = render_plot(series, title=title, xlabel=xlabel, ylabel=ylabel)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    return path
