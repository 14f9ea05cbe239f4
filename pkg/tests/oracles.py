"""Independent slow-path oracles used by the test suite.

These deliberately avoid the polygon-clipping code path: intersection areas
come from dense point-membership grids or Monte-Carlo sampling, so agreement
with the analytic routines is a genuine cross-check.
"""

from __future__ import annotations

import numpy as np

from pointbox.geometry import OrientedBox


def _membership(box: OrientedBox, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    c, s = np.cos(box.theta), np.sin(box.theta)
    dx, dy = xs - box.cx, ys - box.cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) <= box.w / 2.0) & (np.abs(v) <= box.h / 2.0)


def _corner_bounds(box: OrientedBox) -> tuple[float, float, float, float]:
    c, s = np.cos(box.theta), np.sin(box.theta)
    ex = abs(c) * box.w / 2.0 + abs(s) * box.h / 2.0
    ey = abs(s) * box.w / 2.0 + abs(c) * box.h / 2.0
    return box.cx - ex, box.cx + ex, box.cy - ey, box.cy + ey


def raster_intersection_area(a: OrientedBox, b: OrientedBox, cells: int = 1024) -> float:
    """Pixel-center rasterization of the intersection over its bounding box."""
    ax0, ax1, ay0, ay1 = _corner_bounds(a)
    bx0, bx1, by0, by1 = _corner_bounds(b)
    x0, x1 = max(ax0, bx0), min(ax1, bx1)
    y0, y1 = max(ay0, by0), min(ay1, by1)
    if x0 >= x1 or y0 >= y1:
        return 0.0
    xs = np.linspace(x0, x1, cells + 1)
    ys = np.linspace(y0, y1, cells + 1)
    cxs = (xs[:-1] + xs[1:]) / 2.0
    cys = (ys[:-1] + ys[1:]) / 2.0
    gx, gy = np.meshgrid(cxs, cys)
    cell_area = (x1 - x0) * (y1 - y0) / (cells * cells)
    inside = _membership(a, gx, gy) & _membership(b, gx, gy)
    return float(inside.sum()) * cell_area


def raster_iou(a: OrientedBox, b: OrientedBox, cells: int = 1024) -> float:
    inter = raster_intersection_area(a, b, cells)
    union = a.area + b.area - inter
    return inter / union if union > 0.0 else 0.0


def mc_intersection_area(a: OrientedBox, b: OrientedBox, n: int = 1_000_000, seed: int = 0) -> float:
    """Monte-Carlo intersection area, sampling uniformly over box a."""
    rng = np.random.default_rng(seed)
    c, s = np.cos(a.theta), np.sin(a.theta)
    u = rng.uniform(-a.w / 2.0, a.w / 2.0, n)
    v = rng.uniform(-a.h / 2.0, a.h / 2.0, n)
    xs = a.cx + c * u - s * v
    ys = a.cy + s * u + c * v
    return float(_membership(b, xs, ys).mean()) * a.area
