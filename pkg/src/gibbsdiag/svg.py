"""Minimal hand-rolled SVG plotting: bars, histograms, lines.

Figures are conveniences only; CSV/JSON outputs are the machine contract.
"""

from __future__ import annotations

import os
from typing import Sequence

__all__ = ["bar_chart", "histogram", "line_chart"]

_W, _H = 640, 360
_ML, _MR, _MT, _MB = 50, 15, 30, 35


def _frame(title: str) -> list[str]:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_W / 2}" y="18" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{title}</text>'
        )
    return parts


def _axes(parts: list[str], y_max: float) -> None:
    x0, y0, x1, y1 = _ML, _H - _MB, _W - _MR, _MT
    parts.append(
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>'
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>'
    )
    parts.append(
        f'<text x="{x0 - 6}" y="{y1 + 4}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{y_max:.4g}</text>'
        f'<text x="{x0 - 6}" y="{y0 + 4}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">0</text>'
    )


def bar_chart(
    values: Sequence[float],
    path: str | os.PathLike,
    band: tuple[float, float] | None = None,
    title: str = "",
) -> None:
    """Bar chart with an optional shaded horizontal band."""
    vals = [float(v) for v in values]
    top = max([*vals, band[1] if band else 0.0, 1e-12]) * 1.08
    parts = _frame(title)
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB

    def ypix(v: float) -> float:
        return _H - _MB - (v / top) * plot_h

    if band is not None:
        lo, hi = ypix(band[1]), ypix(band[0])
        parts.append(
            f'<rect x="{_ML}" y="{lo:.2f}" width="{plot_w}" '
            f'height="{hi - lo:.2f}" fill="#cccccc" fill-opacity="0.6"/>'
        )
    n = len(vals)
    bw = plot_w / max(n, 1)
    for i, v in enumerate(vals):
        x = _ML + i * bw
        parts.append(
            f'<rect x="{x + 0.08 * bw:.2f}" y="{ypix(v):.2f}" '
            f'width="{0.84 * bw:.2f}" height="{_H - _MB - ypix(v):.2f}" '
            f'fill="#4878a8"/>'
        )
    _axes(parts, top)
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def histogram(
    samples: Sequence[float],
    path: str | os.PathLike,
    bins: int = 40,
    title: str = "",
) -> None:
    """Equal-width histogram of a 1-D sample."""
    import numpy as np

    counts, edges = np.histogram(np.asarray(samples, dtype=float), bins=bins)
    sub = f" [{edges[0]:.3g}, {edges[-1]:.3g}]"
    bar_chart([int(c) for c in counts], path, title=title + sub)


def line_chart(
    series: dict[str, Sequence[float]],
    path: str | os.PathLike,
    title: str = "",
) -> None:
    """Overlaid line plots sharing an x-index."""
    colors = ["#4878a8", "#a85448", "#48a860", "#8148a8", "#a89a48"]
    all_vals = [float(v) for vals in series.values() for v in vals]
    if not all_vals:
        all_vals = [0.0]
    lo, hi = min(all_vals + [0.0]), max(all_vals)
    if hi - lo < 1e-12:
        hi = lo + 1.0
    parts = _frame(title)
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB
    for k, (name, vals) in enumerate(series.items()):
        vals = [float(v) for v in vals]
        if len(vals) < 2:
            continue
        pts = []
        for i, v in enumerate(vals):
            x = _ML + plot_w * i / (len(vals) - 1)
            y = _H - _MB - plot_h * (v - lo) / (hi - lo)
            pts.append(f"{x:.2f},{y:.2f}")
        color = colors[k % len(colors)]
        parts.append(
            f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}"/>'
        )
        parts.append(
            f'<text x="{_W - _MR - 4}" y="{_MT + 14 + 14 * k}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11" fill="{color}">{name}</text>'
        )
    parts.append(
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>'
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_ML}" y2="{_MT}" stroke="black"/>'
        f'<text x="{_ML - 6}" y="{_MT + 4}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{hi:.4g}</text>'
        f'<text x="{_ML - 6}" y="{_H - _MB + 4}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{lo:.4g}</text>'
    )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
