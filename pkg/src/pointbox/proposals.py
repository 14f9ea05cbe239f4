"""Proposal bag construction around point labels.

A bag lays a fixed grid of scale x ratio boxes centered on the point: scale
sets the square-root area, ratio the width/height split, so box (g, r) is
(px, py, s_g * sqrt(rho_r), s_g / sqrt(rho_r)).  Bag order is scale-major,
ratio-minor, which makes the score regrouping used by the scale-consistency
loss a plain row-major reshape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .autodiff import Tensor
from .data import PointLabel
from .geometry import HorizontalBox, OrientedBox


@dataclass(frozen=True)
class BagLayout:
    """Scales and ratios shared by every bag in a run."""

    scales: tuple[float, ...] = (16.0, 32.0, 64.0, 128.0)
    ratios: tuple[float, ...] = (1.0 / 3.0, 0.5, 1.0, 2.0, 3.0)

    def __post_init__(self) -> None:
        if not self.scales or not self.ratios:
            raise ValueError("layout needs at least one scale and one ratio")
        if any(s <= 0 for s in self.scales) or any(r <= 0 for r in self.ratios):
            raise ValueError("scales and ratios must be positive")
        if list(self.scales) != sorted(self.scales) or len(set(self.scales)) != len(self.scales):
            raise ValueError("scales must be strictly increasing")

    @property
    def n_scales(self) -> int:
        return len(self.scales)

    @property
    def n_ratios(self) -> int:
        return len(self.ratios)

    @property
    def size(self) -> int:
        return self.n_scales * self.n_ratios


@dataclass
class ProposalBag:
    """All proposals for one point label, scale-major ratio-minor."""

    label: PointLabel
    boxes: list[HorizontalBox]
    layout: BagLayout

    def __len__(self) -> int:
        return len(self.boxes)

    def index(self, scale_idx: int, ratio_idx: int) -> int:
        return scale_idx * self.layout.n_ratios + ratio_idx


def proposal_box(label: PointLabel, scale: float, ratio: float) -> HorizontalBox:
    """One bag box: area scale^2 split by the width/height ratio."""
    root = math.sqrt(ratio)
    return HorizontalBox(label.x, label.y, scale * root, scale / root)


def generate_bag(label: PointLabel, layout: BagLayout) -> ProposalBag:
    boxes = [
        proposal_box(label, s, r)
        for s in layout.scales
        for r in layout.ratios
    ]
    return ProposalBag(label=label, boxes=boxes, layout=layout)


def oriented_boxes(bag: ProposalBag, angles: list[float]) -> list[OrientedBox]:
    """Attach per-proposal angles, turning the bag's boxes oriented."""
    if len(angles) != len(bag.boxes):
        raise ValueError(f"expected {len(bag.boxes)} angles, got {len(angles)}")
    return [
        OrientedBox(b.cx, b.cy, b.w, b.h, t) for b, t in zip(bag.boxes, angles)
    ]


def regroup_scores(scores: Tensor, layout: BagLayout, n_classes: int) -> Tensor:
    """Reshape an (N, C) score matrix to (G, R*C): one row per scale group,
    ratios and classes flattened together.  Pure reshape, so it is its own
    exact inverse and gradients pass through untouched."""
    n, c = scores.shape
    if n != layout.size or c != n_classes:
        raise ValueError(
            f"scores shape {scores.shape} does not match layout {layout.size} x {n_classes}"
        )
    return scores.reshape(layout.n_scales, layout.n_ratios * n_classes)
