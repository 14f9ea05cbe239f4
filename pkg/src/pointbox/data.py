"""Synthetic scene generation, point-label jitter, and annotation I/O.

Scenes are grayscale canvases of anti-aliased rotated rectangles on a noisy
background.  Every class owns a distinct intensity band painted as a thin
ring at the rectangle rim over a shared dark core, so class evidence exists
only for windows that reach the full extent of the object: a crop of the
interior is the same dark fill whatever the class.  Annotations round-trip
through the eight-corner text format (one object per line:
"x1 y1 x2 y2 x3 y3 x4 y4 class difficulty").
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import OrientedBox, from_corners, rotated_iou, to_corners

# Shared dark fill at the object core; class bands live in a thin rim ring
# starting at RIM_START of the half extent, with a short smoothstep ramp so
# the inner transition is anti-aliased at every object size.
CORE_INTENSITY = 0.22
RIM_START = 0.7
RIM_RAMP = 0.12
BACKGROUND = 0.06
MAX_PLACEMENT_TRIES = 100


class DotaFormatError(ValueError):
    """Annotation parse failure, carrying the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class SceneConfig:
    """Knobs for the synthetic scene generator."""

    height: int = 256
    width: int = 256
    count_range: tuple[int, int] = (3, 6)
    scale_range: tuple[float, float] = (20.0, 90.0)
    aspect_range: tuple[float, float] = (1.0, 3.0)
    n_classes: int = 4
    noise_level: float = 0.02
    band_jitter: float = 0.02
    max_overlap_iou: float = 0.1
    margin: float = 2.0

    def __post_init__(self) -> None:
        if self.n_classes < 1:
            raise ValueError("need at least one class")
        if self.aspect_range[0] < 1.0:
            raise ValueError("aspect range is expressed width/height >= 1")


@dataclass(frozen=True)
class PointLabel:
    """A single-point annotation: position, class id, and the index of the
    scene object it came from (evaluation joins on source_index)."""

    x: float
    y: float
    class_id: int
    source_index: int


@dataclass
class Scene:
    image: np.ndarray  # (H, W) float64 in [0, 1]
    objects: list[tuple[OrientedBox, int]]  # (box, class_id)
    height: int
    width: int
    truncated: bool = False  # placement gave up before reaching its count

    @property
    def canvas(self) -> tuple[int, int]:
        return self.height, self.width


def class_band(class_id: int, n_classes: int) -> float:
    """Rim intensity for a class; bands are evenly spaced and disjoint."""
    if n_classes == 1:
        return 0.75
    return 0.45 + 0.5 * class_id / (n_classes - 1)


def _render_object(image: np.ndarray, box: OrientedBox, rim: float) -> None:
    """Alpha-composite one shaded rectangle onto the canvas in place."""
    h, w = image.shape
    c, s = math.cos(box.theta), math.sin(box.theta)
    ex = abs(c) * box.w / 2.0 + abs(s) * box.h / 2.0
    ey = abs(s) * box.w / 2.0 + abs(c) * box.h / 2.0
    x0 = max(0, int(math.floor(box.cx - ex - 1.0)))
    x1 = min(w, int(math.ceil(box.cx + ex + 2.0)))
    y0 = max(0, int(math.floor(box.cy - ey - 1.0)))
    y1 = min(h, int(math.ceil(box.cy + ey + 2.0)))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    px = xs + 0.5 - box.cx
    py = ys + 0.5 - box.cy
    u = c * px + s * py
    v = -s * px + c * py
    du = np.abs(u) - box.w / 2.0
    dv = np.abs(v) - box.h / 2.0
    outside = np.hypot(np.maximum(du, 0.0), np.maximum(dv, 0.0))
    inside = np.minimum(np.maximum(du, dv), 0.0)
    alpha = np.clip(0.5 - (outside + inside), 0.0, 1.0)
    # Normalized Chebyshev radius: 0 at the center, 1 on the rim.
    r = np.maximum(np.abs(u) / (box.w / 2.0), np.abs(v) / (box.h / 2.0))
    t = np.clip((r - RIM_START) / RIM_RAMP, 0.0, 1.0)
    t = t * t * (3.0 - 2.0 * t)
    shade = CORE_INTENSITY + (rim - CORE_INTENSITY) * t
    patch = image[y0:y1, x0:x1]
    patch[...] = alpha * shade + (1.0 - alpha) * patch


def generate_scene(cfg: SceneConfig, seed: int) -> Scene:
    """Deterministically generate one scene from a seed.

    Placement rejects candidates whose corners leave the canvas or whose
    rotated IoU with any accepted object exceeds cfg.max_overlap_iou; after
    MAX_PLACEMENT_TRIES failures the scene is returned short and flagged.
    """
    rng = np.random.default_rng(seed)
    image = np.clip(
        BACKGROUND + cfg.noise_level * rng.standard_normal((cfg.height, cfg.width)),
        0.0,
        1.0,
    )
    count = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
    objects: list[tuple[OrientedBox, int]] = []
    truncated = False
    for _ in range(count):
        placed = None
        for _ in range(MAX_PLACEMENT_TRIES):
            s = rng.uniform(*cfg.scale_range)
            a = rng.uniform(*cfg.aspect_range)
            bw, bh = s * math.sqrt(a), s / math.sqrt(a)
            theta = rng.uniform(-math.pi / 2.0, math.pi / 2.0)
            cx = rng.uniform(0.0, cfg.width)
            cy = rng.uniform(0.0, cfg.height)
            cand = OrientedBox(cx, cy, bw, bh, theta)
            corners = to_corners(cand)
            if not all(
                cfg.margin <= x <= cfg.width - cfg.margin and cfg.margin <= y <= cfg.height - cfg.margin
                for x, y in corners
            ):
                continue
            if any(rotated_iou(cand, other) > cfg.max_overlap_iou for other, _ in objects):
                continue
            placed = cand
            break
        if placed is None:
            truncated = True
            break
        class_id = int(rng.integers(cfg.n_classes))
        rim = class_band(class_id, cfg.n_classes) + rng.uniform(-cfg.band_jitter, cfg.band_jitter)
        _render_object(image, placed, rim)
        objects.append((placed, class_id))
    return Scene(image=image, objects=objects, height=cfg.height, width=cfg.width, truncated=truncated)


def make_point_label(
    box: OrientedBox,
    class_id: int,
    source_index: int,
    rng: np.random.Generator,
    range_frac: float = 0.1,
    frame: str = "box",
) -> PointLabel:
    """Jitter a point off the box center inside a range_frac*w by range_frac*h
    window.  In the default "box" frame the window is axis-aligned with the
    OBB, which keeps the point inside the object for any range_frac <= 1; the
    "image" frame applies the same offsets unrotated and offers no such
    guarantee for thin rotated boxes.
    """
    if not 0.0 <= range_frac <= 1.0:
        raise ValueError(f"range_frac must be in [0, 1], got {range_frac}")
    du = rng.uniform(-range_frac * box.w / 2.0, range_frac * box.w / 2.0)
    dv = rng.uniform(-range_frac * box.h / 2.0, range_frac * box.h / 2.0)
    if frame == "box":
        c, s = math.cos(box.theta), math.sin(box.theta)
        x = box.cx + c * du - s * dv
        y = box.cy + s * du + c * dv
    elif frame == "image":
        x, y = box.cx + du, box.cy + dv
    else:
        raise ValueError(f"unknown jitter frame {frame!r}")
    return PointLabel(x=float(x), y=float(y), class_id=class_id, source_index=source_index)


def scene_point_labels(scene: Scene, rng: np.random.Generator, range_frac: float = 0.1, frame: str = "box") -> list[PointLabel]:
    return [
        make_point_label(box, class_id, idx, rng, range_frac=range_frac, frame=frame)
        for idx, (box, class_id) in enumerate(scene.objects)
    ]


# ---- eight-corner annotation text format ---------------------------------


def write_dota(path: str | Path, records: list[tuple[OrientedBox, str, int]]) -> None:
    """Write (box, class_name, difficulty) records, corners at 6 decimals."""
    lines = []
    for box, name, difficulty in records:
        nums = " ".join(f"{v:.6f}" for xy in to_corners(box) for v in xy)
        lines.append(f"{nums} {name} {int(difficulty)}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_dota(path: str | Path) -> list[tuple[OrientedBox, str, int]]:
    """Parse the eight-corner format; malformed lines raise DotaFormatError
    naming the offending 1-based line number."""
    records = []
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 10:
            raise DotaFormatError(line_no, f"expected 10 fields, got {len(tokens)}")
        try:
            coords = [float(t) for t in tokens[:8]]
        except ValueError:
            raise DotaFormatError(line_no, f"non-numeric corner in {tokens[:8]}") from None
        try:
            difficulty = int(tokens[9])
        except ValueError:
            raise DotaFormatError(line_no, f"non-integer difficulty {tokens[9]!r}") from None
        corners = [(coords[i], coords[i + 1]) for i in range(0, 8, 2)]
        try:
            box = from_corners(corners)
        except ValueError as exc:
            raise DotaFormatError(line_no, str(exc)) from None
        records.append((box, tokens[8], difficulty))
    return records


# ---- portable grayscale image I/O ----------------------------------------


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a [0, 1] float image as binary 8-bit PGM."""
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":  # comment line
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.float64) / float(maxval)


# ---- scene archives -------------------------------------------------------


def class_name(class_id: int) -> str:
    return f"class{class_id}"


def parse_class_name(name: str) -> int:
    if not name.startswith("class"):
        raise ValueError(f"unrecognized class name {name!r}")
    return int(name[len("class") :])


def write_scene_dir(path: str | Path, scene: Scene, labels: list[PointLabel]) -> None:
    """Persist a scene as a directory of {image.pgm, gt.dota, points.json}."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_pgm(root / "image.pgm", scene.image)
    write_dota(root / "gt.dota", [(box, class_name(cid), 0) for box, cid in scene.objects])
    payload = {
        "canvas": [scene.height, scene.width],
        "truncated": scene.truncated,
        "points": [
            {"x": p.x, "y": p.y, "class_id": p.class_id, "source_index": p.source_index}
            for p in labels
        ],
    }
    (root / "points.json").write_text(json.dumps(payload, indent=2) + "\n")


def read_scene_dir(path: str | Path) -> tuple[Scene, list[PointLabel]]:
    root = Path(path)
    image = read_pgm(root / "image.pgm")
    records = read_dota(root / "gt.dota")
    payload = json.loads((root / "points.json").read_text())
    labels = [
        PointLabel(x=p["x"], y=p["y"], class_id=p["class_id"], source_index=p["source_index"])
        for p in payload["points"]
    ]
    scene = Scene(
        image=image,
        objects=[(box, parse_class_name(name)) for box, name, _ in records],
        height=int(payload["canvas"][0]),
        width=int(payload["canvas"][1]),
        truncated=bool(payload.get("truncated", False)),
    )
    return scene, labels
