"""Minimal dependency-free SVG scatter plots for dependence data."""

from __future__ import annotations

from html import escape
from typing import Sequence

WIDTH, HEIGHT = 480, 320
MARGIN = 48


def _span(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def scatter_svg(
    points: Sequence[tuple[float, float]],
    title: str,
    xlabel: str,
    ylabel: str = "SHAP value (log-odds)",
) -> str:
    """Scatter of (x, y) points with a dashed line at y = 0."""
    if points:
        xlo, xhi = _span([p[0] for p in points])
        ylo, yhi = _span([p[1] for p in points] + [0.0])
    else:
        xlo, xhi, ylo, yhi = 0.0, 1.0, -1.0, 1.0
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def sx(v):
        return MARGIN + (v - xlo) / (xhi - xlo) * pw

    def sy(v):
        return HEIGHT - MARGIN - (v - ylo) / (yhi - ylo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{sy(0.0):.2f}" x2="{WIDTH - MARGIN}" y2="{sy(0.0):.2f}" '
        'stroke="gray" stroke-dasharray="4 3"/>',
    ]
    for x, y in points:
        out.append(
            f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2" fill="#1f77b4" fill-opacity="0.6"/>'
        )
    out += [
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 16}" font-size="10">{xlo:.3g}</text>',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 16}" font-size="10" '
        f'text-anchor="end">{xhi:.3g}</text>',
        f'<text x="{MARGIN - 4}" y="{HEIGHT - MARGIN}" font-size="10" text-anchor="end">{ylo:.3g}</text>',
        f'<text x="{MARGIN - 4}" y="{MARGIN + 8}" font-size="10" text-anchor="end">{yhi:.3g}</text>',
        f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">'
        f'{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2:.1f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {HEIGHT / 2:.1f})">{escape(ylabel)}</text>',
        "</svg>",
    ]
    return "\n".join(out) + "\n"
