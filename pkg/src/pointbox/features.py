"""Per-proposal features: pooled image statistics plus normalized geometry.

Statistics are read through a fixed sample pattern expressed in the box
frame (a 5x5 interior grid, a band of points just inside the boundary, and
an outer ring), so the same code scores axis-aligned bags and, once angles
are attached, oriented ones.  The geometry tail is deliberately limited to
the normalized box center.  Size and aspect features look innocuous, but
inside a bag they enumerate the proposal index, and the instance softmax
will happily learn a bag-independent allocation over that index instead of
reading the image; the center is shared by every proposal in a bag, so it
carries location context without offering that shortcut.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import HorizontalBox, OrientedBox
from .proposals import ProposalBag
from .views import bilinear_sample

FEATURE_DIM = 10
EDGE_BAND = 0.95  # boundary samples sit just inside the box edge
RING_SCALE = 1.35  # context samples sit just outside

_GRID_FRAC = np.linspace(-0.9, 0.9, 5)
_GRID_U, _GRID_V = np.meshgrid(_GRID_FRAC, _GRID_FRAC)
_EDGE_FRAC = np.array([-0.75, -0.25, 0.25, 0.75])
_PERIM_U = np.concatenate([_EDGE_FRAC, _EDGE_FRAC, -np.ones(4), np.ones(4)])
_PERIM_V = np.concatenate([-np.ones(4), np.ones(4), _EDGE_FRAC, _EDGE_FRAC])


class BoxFeaturizer:
    """Caches the image and its gradient magnitude for repeated box reads."""

    def __init__(self, image: np.ndarray):
        self.image = image
        gy, gx = np.gradient(image)
        self.gradmag = np.hypot(gx, gy)
        self.height, self.width = image.shape

    def _sample(self, array: np.ndarray, box: OrientedBox, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        c, s = math.cos(box.theta), math.sin(box.theta)
        pu = us * box.w / 2.0
        pv = vs * box.h / 2.0
        xs = box.cx + c * pu - s * pv
        ys = box.cy + s * pu + c * pv
        return bilinear_sample(array, xs, ys)

    def features(self, box: OrientedBox | HorizontalBox) -> np.ndarray:
        if isinstance(box, HorizontalBox):
            box = box.to_oriented()
        grid = self._sample(self.image, box, _GRID_U.ravel(), _GRID_V.ravel())
        edge = self._sample(self.image, box, _PERIM_U * EDGE_BAND, _PERIM_V * EDGE_BAND)
        ring = self._sample(self.image, box, _PERIM_U * RING_SCALE, _PERIM_V * RING_SCALE)
        edge_grad = self._sample(self.gradmag, box, _PERIM_U * EDGE_BAND, _PERIM_V * EDGE_BAND)
        return np.array(
            [
                grid.mean(),
                grid.std(),
                grid.max(),
                grid.min(),
                edge.mean(),
                ring.mean(),
                grid.mean() - ring.mean(),
                edge_grad.mean(),
                box.cx / self.width,
                box.cy / self.height,
            ]
        )

    def bag_features(self, bag: ProposalBag, angles: list[float] | None = None) -> np.ndarray:
        """(N, FEATURE_DIM) matrix for a bag; angles orient the boxes."""
        if angles is None:
            boxes: list[OrientedBox | HorizontalBox] = list(bag.boxes)
        else:
            from .proposals import oriented_boxes

            boxes = list(oriented_boxes(bag, angles))
        return np.stack([self.features(b) for b in boxes])
