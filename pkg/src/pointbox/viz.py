"""SVG overlays: the scene image with ground truth, points, and pseudo boxes.

Ground truth is drawn solid, pseudo boxes dashed, point labels as crosses.
The grayscale image rides along as an embedded PNG so one file holds the
whole picture.
"""

from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from PIL import Image

from .data import PointLabel, Scene
from .geometry import OrientedBox, to_corners

GT_STYLE = 'fill="none" stroke="#40c057" stroke-width="1.2"'
PSEUDO_STYLE = 'fill="none" stroke="#fd7e14" stroke-width="1.2" stroke-dasharray="5 3"'
POINT_STYLE = 'stroke="#339af0" stroke-width="1.2"'
CROSS_ARM = 4.0


def _png_data_uri(image: np.ndarray) -> str:
    img8 = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img8, mode="L").save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode()


def _polygon(box: OrientedBox, style: str) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in to_corners(box))
    return f'<polygon points="{pts}" {style}/>'


def _cross(x: float, y: float) -> str:
    a = CROSS_ARM
    return (
        f'<line x1="{x - a:.2f}" y1="{y:.2f}" x2="{x + a:.2f}" y2="{y:.2f}" {POINT_STYLE}/>'
        f'<line x1="{x:.2f}" y1="{y - a:.2f}" x2="{x:.2f}" y2="{y + a:.2f}" {POINT_STYLE}/>'
    )


def scene_svg(
    scene: Scene,
    labels: list[PointLabel] | None = None,
    pseudo_boxes: list[OrientedBox] | None = None,
) -> str:
    h, w = scene.canvas
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<image href="{_png_data_uri(scene.image)}" x="0" y="0" width="{w}" height="{h}"/>',
    ]
    for box, _ in scene.objects:
        parts.append(_polygon(box, GT_STYLE))
    for box in pseudo_boxes or []:
        parts.append(_polygon(box, PSEUDO_STYLE))
    for lab in labels or []:
        parts.append(_cross(lab.x, lab.y))
    parts.append("</svg>")
    return "".join(parts)


def write_scene_svg(
    path: str | Path,
    scene: Scene,
    labels: list[PointLabel] | None = None,
    pseudo_boxes: list[OrientedBox] | None = None,
) -> None:
    Path(path).write_text(scene_svg(scene, labels, pseudo_boxes) + "\n")
