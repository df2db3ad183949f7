"""Dependency-free SVG line plots (fixed 800x600 viewBox, one polyline per
series) so figures are testable as plain XML."""
from __future__ import annotations

from pathlib import Path

WIDTH, HEIGHT = 800, 600
MARGIN = 70
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def line_plot(series: dict[str, tuple[list[float], list[float]]],
              title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """series: name -> (x values, y values). Returns an SVG document."""
    xs = [x for pts in series.values() for x in pts[0]]
    ys = [y for pts in series.values() for y in pts[1]]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2 * MARGIN)

    def sy(y):
        return HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2 * MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="30" text-anchor="middle" font-size="18">'
        f'{_escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 20}" text-anchor="middle" '
        f'font-size="14">{_escape(xlabel)}</text>',
        f'<text x="20" y="{HEIGHT / 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 20 {HEIGHT / 2})">{_escape(ylabel)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 20}" font-size="12">'
        f'{x_lo:.3g}</text>',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 20}" font-size="12" '
        f'text-anchor="end">{x_hi:.3g}</text>',
        f'<text x="{MARGIN - 8}" y="{HEIGHT - MARGIN}" font-size="12" '
        f'text-anchor="end">{y_lo:.3g}</text>',
        f'<text x="{MARGIN - 8}" y="{MARGIN + 5}" font-size="12" '
        f'text-anchor="end">{y_hi:.3g}</text>',
    ]
    for idx, (name, (px, py)) in enumerate(series.items()):
        color = COLORS[idx % len(COLORS)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(px, py))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                     f'points="{pts}"/>')
        parts.append(f'<text x="{WIDTH - MARGIN + 5}" y="{MARGIN + 20 * idx}" '
                     f'font-size="12" fill="{color}">{_escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_plot(path: str | Path, svg: str):
    Path(path).write_text(svg)
