"""Hand-rolled SVG line plots.

Byte-determinism is the point: identical series always serialize to identical
files, with no library version or font metrics in the loop. Only what the
experiment CSVs need: axes, tick labels at the extremes, and polylines.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

WIDTH, HEIGHT = 640.0, 480.0
MARGIN = 60.0
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(x: float) -> str:
    return f"{x:.4f}".rstrip("0").rstrip(".")


def polyline_plot(series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
                  title: str, x_label: str, y_label: str,
                  path: str | Path) -> None:
    """Write a line plot; series is a list of (name, xs, ys)."""
    if not series or any(len(xs) == 0 or len(xs) != len(ys) for _, xs, ys in series):
        raise ValueError("each series needs equal-length nonempty xs and ys")
    all_x = [float(v) for _, xs, _ in series for v in xs]
    all_y = [float(v) for _, _, ys in series for v in ys]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def sx(x: float) -> float:
        return MARGIN + (x - x_lo) / x_span * (WIDTH - 2 * MARGIN)

    def sy(y: float) -> float:
        return HEIGHT - MARGIN - (y - y_lo) / y_span * (HEIGHT - 2 * MARGIN)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(WIDTH)}" '
        f'height="{_fmt(HEIGHT)}" viewBox="0 0 {_fmt(WIDTH)} {_fmt(HEIGHT)}">',
        f'<rect width="{_fmt(WIDTH)}" height="{_fmt(HEIGHT)}" fill="white"/>',
        f'<text x="{_fmt(WIDTH / 2)}" y="24" text-anchor="middle" '
        f'font-family="monospace" font-size="14">{title}</text>',
        f'<line x1="{_fmt(MARGIN)}" y1="{_fmt(HEIGHT - MARGIN)}" '
        f'x2="{_fmt(WIDTH - MARGIN)}" y2="{_fmt(HEIGHT - MARGIN)}" stroke="black"/>',
        f'<line x1="{_fmt(MARGIN)}" y1="{_fmt(MARGIN)}" '
        f'x2="{_fmt(MARGIN)}" y2="{_fmt(HEIGHT - MARGIN)}" stroke="black"/>',
        f'<text x="{_fmt(WIDTH / 2)}" y="{_fmt(HEIGHT - 16)}" text-anchor="middle" '
        f'font-family="monospace" font-size="12">{x_label}</text>',
        f'<text x="16" y="{_fmt(HEIGHT / 2)}" text-anchor="middle" '
        f'font-family="monospace" font-size="12" '
        f'transform="rotate(-90 16 {_fmt(HEIGHT / 2)})">{y_label}</text>',
        f'<text x="{_fmt(MARGIN)}" y="{_fmt(HEIGHT - MARGIN + 16)}" '
        f'font-family="monospace" font-size="10">{_fmt(x_lo)}</text>',
        f'<text x="{_fmt(WIDTH - MARGIN)}" y="{_fmt(HEIGHT - MARGIN + 16)}" '
        f'text-anchor="end" font-family="monospace" font-size="10">{_fmt(x_hi)}</text>',
        f'<text x="{_fmt(MARGIN - 4)}" y="{_fmt(HEIGHT - MARGIN)}" text-anchor="end" '
        f'font-family="monospace" font-size="10">{_fmt(y_lo)}</text>',
        f'<text x="{_fmt(MARGIN - 4)}" y="{_fmt(MARGIN + 4)}" text-anchor="end" '
        f'font-family="monospace" font-size="10">{_fmt(y_hi)}</text>',
    ]
    for idx, (name, xs, ys) in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        points = " ".join(f"{_fmt(sx(float(x)))},{_fmt(sy(float(y)))}"
                          for x, y in zip(xs, ys))
        lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{points}"/>')
        lines.append(f'<text x="{_fmt(WIDTH - MARGIN + 4)}" '
                     f'y="{_fmt(MARGIN + 14 * idx)}" font-family="monospace" '
                     f'font-size="10" fill="{color}">{name}</text>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n")
