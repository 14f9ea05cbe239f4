"""Rotated-rectangle geometry: box types, corner conversion, convex clipping,
rotated IoU, and the canvas-level affine transforms used by the view builder.

Coordinates are image-style: x grows right, y grows down, angles are measured
from the +x axis toward +y.  Corner order follows the shoelace-positive
winding of the (x, y) frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

# Half-plane classification tolerance for polygon clipping.
CLIP_EPS = 1e-12


def wrap_angle_half(theta: float) -> float:
    """Wrap an angle into the canonical range (-pi/2, pi/2] modulo pi."""
    return math.pi / 2.0 - ((math.pi / 2.0 - theta) % math.pi)


def angle_distance(a: float, b: float) -> float:
    """Distance between two orientations on the mod-pi circle, in [0, pi/2]."""
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


@dataclass(frozen=True)
class OrientedBox:
    """Center/size/angle rectangle.  theta is stored canonically in
    (-pi/2, pi/2]; construction wraps it (a rectangle rotated by pi is
    itself, so no width/height swap is ever required)."""

    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        if not (self.w > 0.0 and self.h > 0.0):
            raise ValueError(f"box extents must be positive, got w={self.w} h={self.h}")
        object.__setattr__(self, "theta", wrap_angle_half(float(self.theta)))

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class HorizontalBox:
    """Axis-aligned center/size rectangle."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0.0 and self.h > 0.0):
            raise ValueError(f"box extents must be positive, got w={self.w} h={self.h}")

    def to_oriented(self) -> OrientedBox:
        return OrientedBox(self.cx, self.cy, self.w, self.h, 0.0)

    @property
    def area(self) -> float:
        return self.w * self.h


def to_corners(box: OrientedBox) -> list[tuple[float, float]]:
    """Return the 4 corners, starting at local (+w/2, +h/2), in
    shoelace-positive order.

    (0, 0, 2, 1, 0) -> (1, 0.5), (-1, 0.5), (-1, -0.5), (1, -0.5).
    """
    c, s = math.cos(box.theta), math.sin(box.theta)
    hw, hh = box.w / 2.0, box.h / 2.0
    out = []
    for u, v in ((hw, hh), (-hw, hh), (-hw, -hh), (hw, -hh)):
        out.append((box.cx + c * u - s * v, box.cy + s * u + c * v))
    return out


def from_corners(corners: list[tuple[float, float]]) -> OrientedBox:
    """Reconstruct an OrientedBox from 4 corners in to_corners order.

    Width is taken along the first listed edge, so a perfect round trip
    recovers (cx, cy, w, h) exactly and theta modulo pi.  Slightly noisy
    corners are handled by averaging opposite edges.
    """
    if len(corners) != 4:
        raise ValueError(f"expected 4 corners, got {len(corners)}")
    (x0, y0), (x1, y1), (x2, y2), (x3, y3) = corners
    cx = (x0 + x1 + x2 + x3) / 4.0
    cy = (y0 + y1 + y2 + y3) / 4.0
    # p0 - p1 and p3 - p2 both run along the +w axis.
    wx, wy = (x0 - x1) + (x3 - x2), (y0 - y1) + (y3 - y2)
    w = (math.hypot(x0 - x1, y0 - y1) + math.hypot(x3 - x2, y3 - y2)) / 2.0
    h = (math.hypot(x1 - x2, y1 - y2) + math.hypot(x0 - x3, y0 - y3)) / 2.0
    if not (w > 0.0 and h > 0.0):
        raise ValueError("degenerate corner set")
    return OrientedBox(cx, cy, w, h, math.atan2(wy, wx))


def polygon_area(poly: list[tuple[float, float]]) -> float:
    """Shoelace area; positive for shoelace-positive winding."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return acc / 2.0


def clip_convex(subject: list[tuple[float, float]], clip: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clip of a convex subject against a convex clip
    polygon.  Both must be shoelace-positive.  Degenerate output collapses
    to an empty list."""

    def halfplane(ax: float, ay: float, bx: float, by: float, px: float, py: float) -> float:
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax)

    output = list(subject)
    n = len(clip)
    for i in range(n):
        if len(output) < 3:
            return []
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        inputs, output = output, []
        sx, sy = inputs[-1]
        s_in = halfplane(ax, ay, bx, by, sx, sy) >= -CLIP_EPS
        for px, py in inputs:
            p_in = halfplane(ax, ay, bx, by, px, py) >= -CLIP_EPS
            if p_in != s_in:
                da = halfplane(ax, ay, bx, by, sx, sy)
                db = halfplane(ax, ay, bx, by, px, py)
                t = da / (da - db)
                output.append((sx + t * (px - sx), sy + t * (py - sy)))
            if p_in:
                output.append((px, py))
            sx, sy, s_in = px, py, p_in
    if len(output) < 3:
        return []
    return output


def intersection_area(a: OrientedBox, b: OrientedBox) -> float:
    """Area of the convex intersection of two oriented boxes."""
    poly = clip_convex(to_corners(a), to_corners(b))
    if not poly:
        return 0.0
    return max(0.0, polygon_area(poly))


def rotated_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection over union of two oriented boxes, clamped to [0, 1]."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def point_in_box(box: OrientedBox, x: float, y: float) -> bool:
    """Test whether (x, y) lies inside the box (boundary counts as inside)."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx, dy = x - box.cx, y - box.cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return abs(u) <= box.w / 2.0 and abs(v) <= box.h / 2.0


class ViewKind(Enum):
    IDENTITY = "identity"
    RESIZE = "resize"
    ROTATE = "rotate"
    VFLIP = "vflip"


@dataclass(frozen=True)
class AffineView:
    """Record of a canvas-level transform.  sigma applies to RESIZE, angle to
    ROTATE.  sigma is validated positive only, so exact inverses of sampled
    views (sigma outside the sampling range) remain constructible."""

    kind: ViewKind
    sigma: float = 1.0
    angle: float = 0.0

    def __post_init__(self) -> None:
        if self.kind is ViewKind.RESIZE and not self.sigma > 0.0:
            raise ValueError(f"resize scale must be positive, got {self.sigma}")


def invert_view(view: AffineView) -> AffineView:
    """Exact inverse transform (apply on the transformed canvas)."""
    if view.kind is ViewKind.RESIZE:
        return AffineView(ViewKind.RESIZE, sigma=1.0 / view.sigma)
    if view.kind is ViewKind.ROTATE:
        return AffineView(ViewKind.ROTATE, angle=-view.angle)
    return view  # identity and vflip are involutions


def apply_view_point(view: AffineView, x: float, y: float, width: float, height: float) -> tuple[float, float]:
    """Transform a point under the view on a width x height canvas."""
    if view.kind is ViewKind.IDENTITY:
        return x, y
    if view.kind is ViewKind.RESIZE:
        return x * view.sigma, y * view.sigma
    if view.kind is ViewKind.ROTATE:
        px, py = width / 2.0, height / 2.0
        c, s = math.cos(view.angle), math.sin(view.angle)
        dx, dy = x - px, y - py
        return px + c * dx - s * dy, py + s * dx + c * dy
    if view.kind is ViewKind.VFLIP:
        return x, height - y
    raise ValueError(f"unknown view kind {view.kind!r}")


def apply_view(view: AffineView, box: OrientedBox, width: float, height: float) -> OrientedBox:
    """Transform an oriented box under the view on a width x height canvas.

    Resize scales center and extents by sigma; Rotate adds its angle and
    rotates the center about the canvas center; VFlip mirrors cy about the
    horizontal midline and negates theta.
    """
    cx, cy = apply_view_point(view, box.cx, box.cy, width, height)
    if view.kind is ViewKind.RESIZE:
        return OrientedBox(cx, cy, box.w * view.sigma, box.h * view.sigma, box.theta)
    if view.kind is ViewKind.ROTATE:
        return OrientedBox(cx, cy, box.w, box.h, box.theta + view.angle)
    if view.kind is ViewKind.VFLIP:
        return OrientedBox(cx, cy, box.w, box.h, -box.theta)
    return OrientedBox(cx, cy, box.w, box.h, box.theta)


def box_in_canvas(box: OrientedBox, width: float, height: float) -> bool:
    """True when the box center lies on the canvas."""
    return 0.0 <= box.cx <= width and 0.0 <= box.cy <= height
