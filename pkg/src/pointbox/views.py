"""Training-view construction: the original scene plus one enhanced view.

The resized view rescales the canvas by a sampled sigma; the rotate/flip view
rotates about the canvas center by a sampled angle (19 times out of 20) or
flips vertically (1 in 20).  Images are resampled bilinearly with zero
padding; ground truth and point labels are regenerated analytically from the
transform record, never resampled.  Labels whose centers leave the canvas are
flagged invalid and excluded from downstream losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import PointLabel, Scene
from .geometry import AffineView, ViewKind, apply_view, apply_view_point

ROTATE_PROBABILITY = 0.95
SIGMA_RANGE = (0.5, 1.5)


@dataclass
class ViewBundle:
    """Original and enhanced views of one scene plus the transform record.

    valid[i] is False when label i left the canvas under the transform; the
    transform record alone is sufficient to map any original-view geometry
    into the enhanced view.
    """

    original: Scene
    original_labels: list[PointLabel]
    enhanced: Scene
    enhanced_labels: list[PointLabel]
    transform: AffineView
    valid: list[bool]


def bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample continuous coordinates (pixel centers at integer + 0.5) with
    bilinear interpolation and zero padding outside the image."""
    h, w = image.shape
    u = np.asarray(xs, dtype=np.float64) - 0.5
    v = np.asarray(ys, dtype=np.float64) - 0.5
    j0 = np.floor(u).astype(np.int64)
    i0 = np.floor(v).astype(np.int64)
    fu = u - j0
    fv = v - i0
    out = np.zeros(np.broadcast(u, v).shape, dtype=np.float64)
    for di, dj, wt in (
        (0, 0, (1.0 - fu) * (1.0 - fv)),
        (0, 1, fu * (1.0 - fv)),
        (1, 0, (1.0 - fu) * fv),
        (1, 1, fu * fv),
    ):
        ii = i0 + di
        jj = j0 + dj
        ok = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
        vals = np.where(ok, image[np.clip(ii, 0, h - 1), np.clip(jj, 0, w - 1)], 0.0)
        out += wt * vals
    return out


def resample_view(image: np.ndarray, view: AffineView, out_height: int, out_width: int) -> np.ndarray:
    """Render the image under a view by pulling each output pixel center back
    through the inverse transform."""
    ys, xs = np.mgrid[0:out_height, 0:out_width]
    dst_x = xs + 0.5
    dst_y = ys + 0.5
    if view.kind is ViewKind.IDENTITY:
        src_x, src_y = dst_x, dst_y
    elif view.kind is ViewKind.RESIZE:
        src_x, src_y = dst_x / view.sigma, dst_y / view.sigma
    elif view.kind is ViewKind.ROTATE:
        # inverse rotation about the *output* canvas center, which rotation
        # leaves unchanged
        px, py = out_width / 2.0, out_height / 2.0
        c, s = math.cos(-view.angle), math.sin(-view.angle)
        dx, dy = dst_x - px, dst_y - py
        src_x = px + c * dx - s * dy
        src_y = py + s * dx + c * dy
    elif view.kind is ViewKind.VFLIP:
        src_x, src_y = dst_x, out_height - dst_y
    else:
        raise ValueError(f"unknown view kind {view.kind!r}")
    return bilinear_sample(image, src_x, src_y)


def _transform_scene(scene: Scene, view: AffineView) -> Scene:
    if view.kind is ViewKind.RESIZE:
        out_h = max(1, int(round(scene.height * view.sigma)))
        out_w = max(1, int(round(scene.width * view.sigma)))
    else:
        out_h, out_w = scene.height, scene.width
    image = resample_view(scene.image, view, out_h, out_w)
    objects = [
        (apply_view(view, box, scene.width, scene.height), cid) for box, cid in scene.objects
    ]
    return Scene(image=image, objects=objects, height=out_h, width=out_w, truncated=scene.truncated)


def _transform_labels(
    labels: list[PointLabel], view: AffineView, scene: Scene, out: Scene
) -> tuple[list[PointLabel], list[bool]]:
    moved = []
    valid = []
    for p in labels:
        x, y = apply_view_point(view, p.x, p.y, scene.width, scene.height)
        moved.append(PointLabel(x=x, y=y, class_id=p.class_id, source_index=p.source_index))
        valid.append(0.0 <= x <= out.width and 0.0 <= y <= out.height)
    return moved, valid


def build_view(scene: Scene, labels: list[PointLabel], view: AffineView) -> ViewBundle:
    """Apply an explicit transform; the sampled builders below wrap this."""
    enhanced = _transform_scene(scene, view)
    enhanced_labels, valid = _transform_labels(labels, view, scene, enhanced)
    return ViewBundle(
        original=scene,
        original_labels=labels,
        enhanced=enhanced,
        enhanced_labels=enhanced_labels,
        transform=view,
        valid=valid,
    )


def build_resized(
    scene: Scene, labels: list[PointLabel], rng: np.random.Generator, sigma: float | None = None
) -> ViewBundle:
    """Resized view with sigma drawn uniformly from SIGMA_RANGE (or forced)."""
    if sigma is None:
        sigma = float(rng.uniform(*SIGMA_RANGE))
    return build_view(scene, labels, AffineView(ViewKind.RESIZE, sigma=sigma))


def build_rotflp(
    scene: Scene,
    labels: list[PointLabel],
    rng: np.random.Generator,
    force_kind: ViewKind | None = None,
    angle: float | None = None,
) -> ViewBundle:
    """Rotate/flip view: rotation by uniform (-pi, pi] with probability 0.95,
    vertical flip otherwise.  force_kind/angle pin the choice for tests."""
    if force_kind is None:
        kind = ViewKind.ROTATE if rng.random() < ROTATE_PROBABILITY else ViewKind.VFLIP
    else:
        kind = force_kind
    if kind is ViewKind.ROTATE:
        if angle is None:
            angle = float(rng.uniform(-math.pi, math.pi))
        return build_view(scene, labels, AffineView(ViewKind.ROTATE, angle=angle))
    return build_view(scene, labels, AffineView(ViewKind.VFLIP))
