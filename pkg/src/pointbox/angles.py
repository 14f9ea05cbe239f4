"""Dense per-cell angle prediction and its self-supervised consistency loss.

A small shared model slides over a stride pyramid of the image: each cell
sees a 3x3 patch of local intensity and gradient-structure channels plus its
normalized coordinates, and emits one orientation squashed to (-pi, pi) by
2*atan.  Supervision never uses angle labels: predictions at a label's
center cells must shift by the sampled rotation angle between views (modulo
pi, since a rectangle is symmetric under half turns) or negate under a
vertical flip.  Trained maps are then read back per proposal by matching its
scale to a pyramid level and averaging the central cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, parameter
from .data import PointLabel
from .geometry import AffineView, HorizontalBox, ViewKind

PATCH = 3
N_CHANNELS = 8
STRUCTURE_EPS = 1e-8


@dataclass(frozen=True)
class AngleConfig:
    strides: tuple[int, ...] = (4, 8, 16)
    base_scale: float = 56.0
    center_radius: float = 1.5  # positive cells within this many strides
    central_factor: float = 0.5  # concentric readout region, fraction of extent
    hidden: int = 16

    @property
    def n_levels(self) -> int:
        return len(self.strides)

    @property
    def feature_dim(self) -> int:
        # one 3x3 patch of every stride plus the normalized cell coords
        return self.n_levels * N_CHANNELS * PATCH * PATCH + 2


@dataclass
class AngleModel:
    """Two-layer perceptron applied per cell, shared across levels and views."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def init_angle_model(rng: np.random.Generator, cfg: AngleConfig) -> AngleModel:
    """Random init plus one deterministically wired hidden unit.

    The consistency loss is blind to a quarter-turn offset shared by every
    prediction: rotation pairs constrain only differences, and flips anchor
    twice the offset to a multiple of pi, which half-turn resolution cannot
    tell from zero.  Which offset a run converges to is decided by the first
    few steps.  Seeding hidden unit 0 as a pass-through of the half-angle
    consensus channels starts the model near the offset-free solution, so
    training refines that one instead of drawing at random.
    """
    w1_data = rng.normal(0.0, 1.0 / math.sqrt(cfg.feature_dim), (cfg.feature_dim, cfg.hidden))
    half_idx = [q * N_CHANNELS * PATCH * PATCH + 6 * PATCH * PATCH + (PATCH * PATCH) // 2 for q in range(cfg.n_levels)]
    w1_data[:, 0] = 0.0
    w1_data[half_idx, 0] = 0.25
    w1 = parameter(w1_data)
    b1 = parameter(np.zeros(cfg.hidden))
    # small random head keeps the remaining units quiet at the start; the
    # pass-through gain balances the tanh/atan squash so the initial map
    # stays within a few degrees of identity over the whole angle range
    w2_data = rng.normal(0.0, 0.1 / math.sqrt(cfg.hidden), (cfg.hidden, 1))
    w2_data[0, 0] = 1.0
    w2 = parameter(w2_data)
    b2 = parameter(np.zeros(1))
    return AngleModel(w1, b1, w2, b2)


def _pool(image: np.ndarray, stride: int) -> np.ndarray:
    """Mean-pool by stride, edge-padding ragged borders."""
    h, w = image.shape
    ph = (-h) % stride
    pw = (-w) % stride
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw)), mode="edge")
    hp, wp = image.shape[0] // stride, image.shape[1] // stride
    return image.reshape(hp, stride, wp, stride).mean(axis=(1, 3))


def _im2col3(channels: list[np.ndarray]) -> np.ndarray:
    """Stack 3x3 zero-padded patches of each channel: (H*W, 9*len(channels))."""
    cols = []
    for ch in channels:
        padded = np.pad(ch, 1, mode="constant")
        h, w = ch.shape
        for di in range(PATCH):
            for dj in range(PATCH):
                cols.append(padded[di : di + h, dj : dj + w].reshape(-1))
    return np.stack(cols, axis=1)


def _box_sum(x: np.ndarray, radius: int) -> np.ndarray:
    """Square box sum of side 2*radius+1 with zero padding."""
    h, w = x.shape
    padded = np.pad(x, radius, mode="constant")
    out = np.zeros_like(x)
    for di in range(2 * radius + 1):
        for dj in range(2 * radius + 1):
            out += padded[di : di + h, dj : dj + w]
    return out


def _channel_maps(image: np.ndarray, stride: int) -> list[np.ndarray]:
    """Pooled intensity plus gradient-structure channels at one stride.

    Gradients are taken at full resolution, where the renderer's
    anti-aliased edges make per-pixel orientations exact, and the
    double-angle structure pair (cos 2*phi, sin 2*phi, energy-weighted)
    is then mean-pooled per cell: vector averaging lets strong edges
    dominate and cancels the half-turn sign ambiguity instead of blurring
    it the way pooling the image first would.  Cells also get a 3x3
    neighborhood consensus of the pooled pair, unrolled to two scalar
    half-angle channels whose branch cuts sit a quarter turn apart:
    wherever one wraps the other is smooth, picking between them only
    needs the sign of the consensus cosine (supplied alongside), and the
    seam between the unrolls is a half-turn jump, invisible to every
    modulo-pi consistency target.
    """
    gy, gx = np.gradient(image)
    energy = gx * gx + gy * gy
    # double angle of the gradient normal, i.e. the edge direction: the
    # half-angle channels then read as orientations, not rim normals
    a = _pool(gy * gy - gx * gx, stride)
    b = _pool(-2.0 * gx * gy, stride)
    lvl = _pool(image, stride)
    m = _pool(energy, stride)
    gate = m / (m + 0.005)
    norm = np.hypot(a, b)
    ca = a / (norm + STRUCTURE_EPS) * gate
    cb = b / (norm + STRUCTURE_EPS) * gate
    # wider consensus at fine strides, where a 3-cell window is only a
    # dozen pixels; coarse strides already cover whole objects
    radius = 2 if stride <= 4 else 1
    va, vb = _box_sum(a, radius), _box_sum(b, radius)
    strength = np.hypot(va, vb)
    sat = strength / (strength + 0.01)
    psi = np.arctan2(vb, va)
    half_centered = 0.5 * psi * sat
    half_shifted = 0.5 * np.mod(psi, 2.0 * np.pi) * sat
    return [lvl, ca, cb, gate, va / (strength + STRUCTURE_EPS) * sat, vb / (strength + STRUCTURE_EPS) * sat, half_centered, half_shifted]


def pyramid_inputs(image: np.ndarray, cfg: AngleConfig) -> list[tuple[np.ndarray, tuple[int, int]]]:
    """Per-cell feature rows for every pyramid level.

    Each cell sees the 3x3 patch of every stride's channel maps at its own
    location plus its normalized coordinates, so fine-level cells inside
    large objects still get whole-object context from the coarse strides.
    """
    chans = [_channel_maps(image, s) for s in cfg.strides]
    patches = [_im2col3(c) for c in chans]
    shapes = [c[0].shape for c in chans]
    out = []
    for p, sp in enumerate(cfg.strides):
        hp, wp = shapes[p]
        ys, xs = np.mgrid[0:hp, 0:wp]
        cx = (xs + 0.5) * sp
        cy = (ys + 0.5) * sp
        rows = []
        for q, sq in enumerate(cfg.strides):
            hq, wq = shapes[q]
            iq = np.clip((cy // sq).astype(int), 0, hq - 1)
            jq = np.clip((cx // sq).astype(int), 0, wq - 1)
            rows.append(patches[q][(iq * wq + jq).reshape(-1)])
        coords = np.stack(
            [(xs.reshape(-1) + 0.5) / wp, (ys.reshape(-1) + 0.5) / hp], axis=1
        )
        out.append((np.concatenate(rows + [coords], axis=1), (hp, wp)))
    return out


@dataclass
class AnglePyramid:
    """Flattened per-level angle maps in (-pi, pi), row-major cell order."""

    levels: list[Tensor]
    shapes: list[tuple[int, int]]
    cfg: AngleConfig

    def values(self, level: int) -> np.ndarray:
        return self.levels[level].data


def predict_pyramid(
    model: AngleModel, inputs: list[tuple[np.ndarray, tuple[int, int]]], cfg: AngleConfig
) -> AnglePyramid:
    levels = []
    shapes = []
    for feats, shape in inputs:
        hidden = (Tensor(feats) @ model.w1 + model.b1).tanh()
        raw = hidden @ model.w2 + model.b2
        theta = raw.reshape(raw.shape[0]).atan() * 2.0
        levels.append(theta)
        shapes.append(shape)
    return AnglePyramid(levels=levels, shapes=shapes, cfg=cfg)


def feature_alignment_offset(
    model: AngleModel,
    inputs_list: list[list[tuple[np.ndarray, tuple[int, int]]]],
    cfg: AngleConfig,
) -> float:
    """Circular offset (mod pi, in radians) between the model's dense
    predictions and the gradient-consensus half angles in its own input
    features, weighted by consensus strength.

    The consistency loss constrains differences and sums of predictions, so
    a solution shifted by a quarter turn everywhere scores exactly the same;
    this offset is the observable that separates the two.  Near zero means
    the model agrees with the image gradients about which direction is
    "along" an object; near a quarter turn means every prediction is
    rotated."""
    zr = zi = 0.0
    center = (PATCH * PATCH) // 2
    for inputs in inputs_list:
        pyramid = predict_pyramid(model, inputs, cfg)
        for level, (feats, _) in enumerate(inputs):
            base = level * N_CHANNELS * PATCH * PATCH
            a = feats[:, base + 4 * PATCH * PATCH + center]
            b = feats[:, base + 5 * PATCH * PATCH + center]
            sat = np.hypot(a, b)
            psi = np.arctan2(b, a)
            dev = 2.0 * pyramid.levels[level].data - psi
            zr += float(np.sum(sat * np.cos(dev)))
            zi += float(np.sum(sat * np.sin(dev)))
    return math.atan2(zi, zr) / 2.0


# ---- dense assignment -----------------------------------------------------


def assign_center_cells(
    x: float, y: float, shape: tuple[int, int], stride: int, radius: float
) -> list[int]:
    """Flat indices of cells whose centers lie within radius*stride of the
    point.  Empty (tiny radius or off-canvas point) falls back to the single
    nearest in-bounds cell."""
    hp, wp = shape
    r = radius * stride
    j_lo = max(0, int(math.floor((x - r) / stride - 0.5)))
    j_hi = min(wp - 1, int(math.ceil((x + r) / stride - 0.5)))
    i_lo = max(0, int(math.floor((y - r) / stride - 0.5)))
    i_hi = min(hp - 1, int(math.ceil((y + r) / stride - 0.5)))
    out = []
    for i in range(i_lo, i_hi + 1):
        cy = (i + 0.5) * stride
        for j in range(j_lo, j_hi + 1):
            cx = (j + 0.5) * stride
            if (cx - x) ** 2 + (cy - y) ** 2 <= r * r:
                out.append(i * wp + j)
    if not out:
        j = min(wp - 1, max(0, int(round(x / stride - 0.5))))
        i = min(hp - 1, max(0, int(round(y / stride - 0.5))))
        out = [i * wp + j]
    return out


def label_level_angles(pyramid: AnglePyramid, label: PointLabel) -> list[Tensor]:
    """Mean predicted angle at the label's positive cells, one scalar per
    level, differentiable back into the shared model."""
    out = []
    for level, (theta, shape, stride) in enumerate(
        zip(pyramid.levels, pyramid.shapes, pyramid.cfg.strides)
    ):
        idx = assign_center_cells(label.x, label.y, shape, stride, pyramid.cfg.center_radius)
        out.append(theta.take_rows(idx).mean())
    return out


# ---- self-supervised angle loss ------------------------------------------


def _nearest_half_turn(value: float, offset: float = 0.0) -> float:
    """The multiple k*pi + offset nearest to value (exact minimum over all
    integers k)."""
    k = math.floor((value - offset) / math.pi + 0.5)
    return k * math.pi + offset


def angle_consistency_loss(
    original: AnglePyramid,
    enhanced: AnglePyramid,
    original_labels: list[PointLabel],
    enhanced_labels: list[PointLabel],
    valid: list[bool],
    transform: AffineView,
    beta: float = 1.0,
) -> Tensor:
    """Consistency between per-label level angles of the two views.

    Rotation views constrain (enhanced - original) to the transform angle
    modulo pi; flip views constrain (enhanced + original) to zero modulo pi.
    Each label/level term resolves its own half-turn offset, terms use
    smooth-L1, and the total is normalized by the number of valid labels.
    Only the branch matching the sampled transform contributes.
    """
    live = [
        (po, pe)
        for po, pe, ok in zip(original_labels, enhanced_labels, valid)
        if ok
    ]
    if not live:
        return Tensor(0.0)
    total = None
    for po, pe in live:
        mus_o = label_level_angles(original, po)
        mus_e = label_level_angles(enhanced, pe)
        for mu_o, mu_e in zip(mus_o, mus_e):
            if transform.kind is ViewKind.ROTATE:
                diff = mu_e - mu_o
                target = _nearest_half_turn(float(diff.data), offset=transform.angle)
                term = diff.smooth_l1(target, beta=beta)
            elif transform.kind is ViewKind.VFLIP:
                ssum = mu_e + mu_o
                target = _nearest_half_turn(float(ssum.data))
                term = ssum.smooth_l1(target, beta=beta)
            else:
                raise ValueError(f"angle loss undefined for view kind {transform.kind!r}")
            total = term if total is None else total + term
    return total * (1.0 / len(live))


# ---- scale-to-level matching and angle readout ---------------------------


def match_level(w: float, h: float, cfg: AngleConfig) -> int:
    """Pyramid level for a proposal: round-half-up of log2 of its root-area
    relative to the base scale, clamped to the available levels."""
    value = math.log2(math.sqrt(w * h) / cfg.base_scale + 1e-6)
    level = math.floor(value + 0.5)
    return min(cfg.n_levels - 1, max(0, level))


def central_cells(box: HorizontalBox, shape: tuple[int, int], stride: int, factor: float) -> list[int]:
    """Cells of one level whose centers fall in the concentric factor-scaled
    region of the box; empty falls back to the cell nearest the center."""
    hp, wp = shape
    x0, x1 = box.cx - factor * box.w / 2.0, box.cx + factor * box.w / 2.0
    y0, y1 = box.cy - factor * box.h / 2.0, box.cy + factor * box.h / 2.0
    j_lo = max(0, int(math.floor(x0 / stride - 0.5)))
    j_hi = min(wp - 1, int(math.ceil(x1 / stride - 0.5)))
    i_lo = max(0, int(math.floor(y0 / stride - 0.5)))
    i_hi = min(hp - 1, int(math.ceil(y1 / stride - 0.5)))
    out = []
    for i in range(i_lo, i_hi + 1):
        cy = (i + 0.5) * stride
        if not (y0 <= cy <= y1):
            continue
        for j in range(j_lo, j_hi + 1):
            cx = (j + 0.5) * stride
            if x0 <= cx <= x1:
                out.append(i * wp + j)
    if not out:
        j = min(wp - 1, max(0, int(round(box.cx / stride - 0.5))))
        i = min(hp - 1, max(0, int(round(box.cy / stride - 0.5))))
        out = [i * wp + j]
    return out


def proposal_angle(pyramid: AnglePyramid, box: HorizontalBox) -> float:
    """Detached angle for one proposal: mean map value over the central
    region of its matched level."""
    cfg = pyramid.cfg
    level = match_level(box.w, box.h, cfg)
    idx = central_cells(box, pyramid.shapes[level], cfg.strides[level], cfg.central_factor)
    return float(pyramid.values(level)[idx].mean())


def bag_angles(pyramid: AnglePyramid, boxes: list[HorizontalBox]) -> list[float]:
    return [proposal_angle(pyramid, b) for b in boxes]
