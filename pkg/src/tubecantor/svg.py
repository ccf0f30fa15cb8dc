"""Static SVG drawing of one planar generation."""
from __future__ import annotations

import numpy as np

SIZE = 800


def _n(x: float) -> str:
    return format(float(x), ".6f")


def render(centers: np.ndarray, side: float, parents: tuple[np.ndarray, float] | None = None,
           tube: tuple | None = None) -> str:
    """SVG text: unit square, optional parent outlines, child cubes and an optional tube overlay."""
    if centers.ndim != 2 or centers.shape[1] != 2:
        raise ValueError("SVG export is planar only")

    def box(c, h, style):
        x = (c[0] - h / 2) * SIZE
        y = (1 - c[1] - h / 2) * SIZE
        return f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(h * SIZE)}" height="{_n(h * SIZE)}" {style}/>'

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">',
        f'<g id="frame"><path d="M0 0H{SIZE}V{SIZE}H0Z" fill="white" stroke="black"/></g>',
    ]
    if parents is not None:
        out.append('<g id="parents">')
        h = parents[1]
        for c in parents[0]:
            x, y = (c[0] - h / 2) * SIZE, (1 - c[1] - h / 2) * SIZE
            out.append(f'<path d="M{_n(x)} {_n(y)}h{_n(h * SIZE)}v{_n(h * SIZE)}h{_n(-h * SIZE)}Z" '
                       'fill="none" stroke="#999"/>')
        out.append("</g>")
    out.append('<g id="cubes">')
    out += [box(c, side, 'fill="#1f4e99"') for c in centers]
    out.append("</g>")
    if tube is not None:
        a, u, w = np.asarray(tube[0], float), np.asarray(tube[1], float), float(tube[2])
        p, q = a - 3 * u, a + 3 * u
        out.append(
            f'<g id="tube"><line x1="{_n(p[0] * SIZE)}" y1="{_n((1 - p[1]) * SIZE)}" '
            f'x2="{_n(q[0] * SIZE)}" y2="{_n((1 - q[1]) * SIZE)}" stroke="#c0392b" '
            f'stroke-opacity="0.35" stroke-width="{_n(max(w * SIZE, 0.5))}"/></g>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
