"""Scan conversion shared by the UV-space map rasterizer and the camera renderer.

Screen coordinates are in pixel units with pixel ``(r, c)`` sampled at its centre
``(c + 0.5, r + 0.5)``. A pixel is covered when its centre lies in the closed
triangle. Both the optimized per-face path and the brute-force oracles evaluate
coverage through :func:`edge_function`, so identical inputs give identical bits.
"""

from __future__ import annotations

import numpy as np


def edge_function(ax, ay, bx, by, px, py):
    """Twice the signed area of triangle ``(a, b, p)``."""
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def triangle_area2(xs, ys) -> float:
    return edge_function(xs[0], ys[0], xs[1], ys[1], xs[2], ys[2])


def screen_barycentrics(xs, ys, area, px, py):
    """Screen-space barycentric weights of sample points, plus the closed-triangle test."""
    w0 = edge_function(xs[1], ys[1], xs[2], ys[2], px, py)
    w1 = edge_function(xs[2], ys[2], xs[0], ys[0], px, py)
    w2 = edge_function(xs[0], ys[0], xs[1], ys[1], px, py)
    if area > 0:
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    else:
        inside = (w0 <= 0) & (w1 <= 0) & (w2 <= 0)
    return w0 / area, w1 / area, w2 / area, inside


def triangle_pixels(xs, ys, height: int, width: int):
    """Pixels whose centres fall inside the triangle.

    Returns ``(rows, cols, b0, b1, b2)`` restricted to the triangle's bounding box,
    or ``None`` for zero-area / off-screen triangles.
    """
    area = triangle_area2(xs, ys)
    if area == 0 or not np.isfinite(area):
        return None
    c0 = max(0, int(np.ceil(min(xs) - 0.5)))
    c1 = min(width - 1, int(np.floor(max(xs) - 0.5)))
    r0 = max(0, int(np.ceil(min(ys) - 0.5)))
    r1 = min(height - 1, int(np.floor(max(ys) - 0.5)))
    if c0 > c1 or r0 > r1:
        return None
    rows, cols = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    px = cols + 0.5
    py = rows + 0.5
    b0, b1, b2, inside = screen_barycentrics(xs, ys, area, px, py)
    if not inside.any():
        return None
    return rows[inside], cols[inside], b0[inside], b1[inside], b2[inside]
