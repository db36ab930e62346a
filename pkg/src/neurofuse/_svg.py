"""Bare-bones SVG line and bar charts (polyline, grid, labels).

Numbers are written with fixed precision so identical data gives
identical bytes.
"""

from __future__ import annotations

from html import escape

import numpy as np

W, H = 640, 360
LEFT, RIGHT, TOP, BOTTOM = 64, 16, 32, 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def _frame(title, xlabel, ylabel, xlo, xhi, ylo, yhi, xtick_labels=None):
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - xlo) / (xhi - xlo) * pw

    def sy(y):
        return TOP + (1.0 - (y - ylo) / (yhi - ylo)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]
    for y in _ticks(ylo, yhi):
        out.append(f'<line x1="{LEFT}" y1="{sy(y):.2f}" x2="{W - RIGHT}" y2="{sy(y):.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{LEFT - 4}" y="{sy(y) + 4:.2f}" text-anchor="end">{y:.3g}</text>')
    if xtick_labels is None:
        for x in _ticks(xlo, xhi):
            out.append(f'<line x1="{sx(x):.2f}" y1="{TOP}" x2="{sx(x):.2f}" y2="{H - BOTTOM}" stroke="#ddd"/>')
            out.append(f'<text x="{sx(x):.2f}" y="{H - BOTTOM + 14}" text-anchor="middle">{x:.3g}</text>')
    else:
        for x, lab in xtick_labels:
            out.append(
                f'<text x="{sx(x):.2f}" y="{H - BOTTOM + 12}" text-anchor="end" '
                f'transform="rotate(-60 {sx(x):.2f} {H - BOTTOM + 12})" font-size="9">{escape(lab)}</text>'
            )
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{H - 6}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="14" y="{TOP + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {TOP + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    return out, sx, sy


def _limits(values):
    v = np.concatenate([np.ravel(a) for a in values])
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def line_plot(x, series: dict, title: str, xlabel: str, ylabel: str) -> str:
    """``series`` maps legend label -> y values sharing ``x``."""
    x = np.asarray(x, float)
    ylo, yhi = _limits(list(series.values()))
    out, sx, sy = _frame(title, xlabel, ylabel, float(x[0]), float(x[-1]), ylo, yhi)
    for k, (label, y) in enumerate(series.items()):
        y = np.asarray(y, float)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y) if np.isfinite(b))
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        out.append(
            f'<text x="{W - RIGHT - 4}" y="{TOP + 14 + 13 * k}" text-anchor="end" fill="{color}">'
            f"{escape(label)}</text>"
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_plot(labels, values, title: str, ylabel: str, threshold: float | None = None) -> str:
    values = np.asarray(values, float)
    n = len(labels)
    extra = [np.array([0.0])] + ([np.array([threshold])] if threshold is not None else [])
    ylo, yhi = _limits([values] + extra)
    ticks = [(i + 0.5, lab) for i, lab in enumerate(labels)]
    out, sx, sy = _frame(title, "", ylabel, 0.0, float(max(n, 1)), ylo, yhi, ticks)
    for i, v in enumerate(values):
        if not np.isfinite(v):
            continue
        top, base = sy(max(v, 0.0)), sy(min(v, 0.0))
        out.append(
            f'<rect x="{sx(i + 0.15):.2f}" y="{top:.2f}" width="{sx(0.7) - sx(0):.2f}" '
            f'height="{base - top:.2f}" fill="{PALETTE[0]}"/>'
        )
    if threshold is not None:
        out.append(
            f'<line x1="{LEFT}" y1="{sy(threshold):.2f}" x2="{W - RIGHT}" y2="{sy(threshold):.2f}" '
            f'stroke="{PALETTE[1]}" stroke-dasharray="4 3"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
