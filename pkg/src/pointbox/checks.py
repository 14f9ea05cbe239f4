"""Runnable gradient audit: every loss family against finite differences.

The same checks live in the test suite; this module makes them a shippable
command so a broken change fails fast outside CI too.
"""

from __future__ import annotations

import numpy as np

from .angles import AngleConfig, AnglePyramid, angle_consistency_loss
from .autodiff import Tensor, grad_check
from .consistency import ssc_loss
from .data import PointLabel
from .geometry import AffineView, ViewKind
from .mil import ScorePair, focal_loss, mil_loss
from .proposals import BagLayout

TOLERANCE = 1e-5

_LAYOUT = BagLayout(scales=(16.0, 32.0), ratios=(0.5, 1.0, 2.0))
_CLASSES = 3
_CELLS = (4, 4)
_CFG1 = AngleConfig(strides=(4,))


def _pair(ins_logits: Tensor, cls_logits: Tensor) -> ScorePair:
    return ScorePair(ins=ins_logits.softmax(axis=0), cls=cls_logits.softmax(axis=1))


def _logit_leaves(rng: np.random.Generator, n: int) -> list[Tensor]:
    shape = (_LAYOUT.size, _CLASSES)
    return [Tensor(rng.normal(0.0, 0.7, shape), requires_grad=True) for _ in range(n)]


def _angle_leaves(rng: np.random.Generator) -> list[Tensor]:
    # kept inside one half-turn basin and the quadratic smooth-l1 zone
    n = _CELLS[0] * _CELLS[1]
    return [Tensor(rng.uniform(-0.3, 0.3, n), requires_grad=True) for _ in range(2)]


def _angle_loss(view: AffineView):
    label = PointLabel(x=8.0, y=8.0, class_id=0, source_index=0)

    def f(a: Tensor, b: Tensor) -> Tensor:
        pa = AnglePyramid(levels=[a], shapes=[_CELLS], cfg=_CFG1)
        pb = AnglePyramid(levels=[b], shapes=[_CELLS], cfg=_CFG1)
        return angle_consistency_loss(pa, pb, [label], [label], [True], view)

    return f


def _broken_square(x: Tensor) -> Tensor:
    """Deliberately wrong backward; exists so the audit can prove it fails."""
    y = x * x
    orig = y._backward

    def broken():
        orig()
        x.grad[...] *= 0.5

    y._backward = broken
    return y.sum()


def gradient_suite(points: int = 20, seed: int = 0, sabotage: bool = False) -> dict[str, float]:
    """Worst relative gradient error per loss family over seeded points."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def run(name: str, f, leaves_fn):
        err = 0.0
        for _ in range(points):
            err = max(err, grad_check(f, leaves_fn()))
        worst[name] = err

    cid = 1
    run(
        "bag_cross_entropy",
        lambda i, c: mil_loss([_pair(i, c).bag_score], [cid], _CLASSES),
        lambda: _logit_leaves(rng, 2),
    )
    run(
        "bag_focal",
        lambda i, c: focal_loss([_pair(i, c).bag_score], [cid], _CLASSES),
        lambda: _logit_leaves(rng, 2),
    )
    run(
        "scale_consistency",
        lambda i1, c1, i2, c2: ssc_loss([(_pair(i1, c1), _pair(i2, c2))], _LAYOUT, _CLASSES),
        lambda: _logit_leaves(rng, 4),
    )
    run(
        "angle_rotation",
        _angle_loss(AffineView(kind=ViewKind.ROTATE, angle=0.3)),
        lambda: _angle_leaves(rng),
    )
    run(
        "angle_flip",
        _angle_loss(AffineView(kind=ViewKind.VFLIP)),
        lambda: _angle_leaves(rng),
    )
    if sabotage:
        run(
            "sabotaged_square",
            _broken_square,
            lambda: [Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True)],
        )
    return worst
