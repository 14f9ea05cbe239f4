"""Dual-stream multiple-instance scoring over proposal bags.

A shared embedding feeds two softmax streams: the instance stream competes
proposals against each other per class (softmax over the bag), the class
stream competes classes per proposal (softmax over classes).  Their product,
summed over the bag, is the bag-level class score trained against the point
label.  A second "refined" stream pair on the same embedding is trained with
a focal loss; pseudo-box selection ranks proposals by the product of both
stream pairs' scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, parameter
from .data import PointLabel
from .features import FEATURE_DIM
from .geometry import OrientedBox

CLAMP_LO = 1e-7
CLAMP_HI = 1.0 - 1e-7


class EmptyBagError(ValueError):
    """Raised when a bag with zero proposals reaches scoring or selection."""


@dataclass
class MILParams:
    """Trainable weights: shared embedding plus base and refined streams."""

    embed_w: Tensor
    embed_b: Tensor
    ins_w: Tensor
    ins_b: Tensor
    cls_w: Tensor
    cls_b: Tensor
    ref_ins_w: Tensor
    ref_ins_b: Tensor
    ref_cls_w: Tensor
    ref_cls_b: Tensor

    def parameters(self) -> list[Tensor]:
        return [
            self.embed_w,
            self.embed_b,
            self.ins_w,
            self.ins_b,
            self.cls_w,
            self.cls_b,
            self.ref_ins_w,
            self.ref_ins_b,
            self.ref_cls_w,
            self.ref_cls_b,
        ]


def init_mil_params(
    rng: np.random.Generator, n_classes: int, hidden: int = 24, feature_dim: int = FEATURE_DIM
) -> MILParams:
    def dense(fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
        w = parameter((fan_in, fan_out), rng=rng, scale=1.0 / np.sqrt(fan_in))
        b = parameter(np.zeros(fan_out))
        return w, b

    embed_w, embed_b = dense(feature_dim, hidden)
    ins_w, ins_b = dense(hidden, n_classes)
    cls_w, cls_b = dense(hidden, n_classes)
    ref_ins_w, ref_ins_b = dense(hidden, n_classes)
    ref_cls_w, ref_cls_b = dense(hidden, n_classes)
    return MILParams(
        embed_w, embed_b, ins_w, ins_b, cls_w, cls_b, ref_ins_w, ref_ins_b, ref_cls_w, ref_cls_b
    )


@dataclass
class ScorePair:
    """Softmax outputs for one bag: instance stream columns each sum to 1,
    class stream rows each sum to 1; bag_score is their product summed over
    proposals, one value per class in (0, 1)."""

    ins: Tensor  # (N, C)
    cls: Tensor  # (N, C)

    @property
    def product(self) -> Tensor:
        return self.ins * self.cls

    @property
    def bag_score(self) -> Tensor:
        return self.product.sum(axis=0)


def score_bag(params: MILParams, features: np.ndarray | Tensor, refined: bool = False) -> ScorePair:
    """Score one bag's (N, F) features through the requested stream pair."""
    feats = features if isinstance(features, Tensor) else Tensor(features)
    if feats.data.ndim != 2 or feats.shape[0] == 0:
        raise EmptyBagError(f"bag features must be (N>=1, F), got {feats.shape}")
    hidden = (feats @ params.embed_w + params.embed_b).tanh()
    if refined:
        ins_logits = hidden @ params.ref_ins_w + params.ref_ins_b
        cls_logits = hidden @ params.ref_cls_w + params.ref_cls_b
    else:
        ins_logits = hidden @ params.ins_w + params.ins_b
        cls_logits = hidden @ params.cls_w + params.cls_b
    return ScorePair(ins=ins_logits.softmax(axis=0), cls=cls_logits.softmax(axis=1))


def one_hot(class_id: int, n_classes: int) -> np.ndarray:
    if not 0 <= class_id < n_classes:
        raise ValueError(f"class id {class_id} outside [0, {n_classes})")
    q = np.zeros(n_classes)
    q[class_id] = 1.0
    return q


def mil_loss(bag_scores: list[Tensor], class_ids: list[int], n_classes: int) -> Tensor:
    """Binary cross-entropy between bag scores and one-hot point labels,
    summed over classes and averaged over bags.  Scores are clamped to
    [1e-7, 1 - 1e-7] before the logs."""
    if not bag_scores:
        raise EmptyBagError("mil_loss needs at least one bag")
    if len(bag_scores) != len(class_ids):
        raise ValueError("one class id per bag required")
    total = None
    for score, cid in zip(bag_scores, class_ids):
        q = one_hot(cid, n_classes)
        p = score.clamp(CLAMP_LO, CLAMP_HI)
        term = -(q * p.log()).sum() - ((1.0 - q) * (1.0 - p).log()).sum()
        total = term if total is None else total + term
    return total * (1.0 / len(bag_scores))


def focal_loss(
    bag_scores: list[Tensor],
    class_ids: list[int],
    n_classes: int,
    gamma: float = 2.0,
    balance: float = 0.25,
) -> Tensor:
    """Focal form of the bag loss: positives weighted by balance and damped
    by (1-p)^gamma, negatives damped by p^gamma.  gamma=0, balance=1 recovers
    the plain cross-entropy."""
    if not bag_scores:
        raise EmptyBagError("focal_loss needs at least one bag")
    if len(bag_scores) != len(class_ids):
        raise ValueError("one class id per bag required")
    total = None
    for score, cid in zip(bag_scores, class_ids):
        q = one_hot(cid, n_classes)
        p = score.clamp(CLAMP_LO, CLAMP_HI)
        pos = -(q * ((1.0 - p) ** gamma) * p.log()).sum() * balance
        neg = -((1.0 - q) * (p ** gamma) * (1.0 - p).log()).sum()
        term = pos + neg
        total = term if total is None else total + term
    return total * (1.0 / len(bag_scores))


def select_pseudo_obb(
    boxes: list[OrientedBox],
    scores: np.ndarray,
    label: PointLabel,
    k: int = 3,
) -> OrientedBox:
    """Merge the top-k proposals into one pseudo box.

    Width and height are the score-weighted average of the top-k boxes; the
    angle comes from the single best proposal (whose angle was attached by
    the dense matcher); the center is the point label itself.  When the bag
    holds fewer than k proposals the argmax proposal is used alone.
    """
    if not boxes:
        raise EmptyBagError("cannot select from an empty bag")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(boxes),):
        raise ValueError(f"need one score per box, got {scores.shape} for {len(boxes)}")
    order = np.argsort(-scores, kind="stable")
    best = int(order[0])
    if k > len(boxes):
        top = [best]
    else:
        top = [int(i) for i in order[:k]]
    weights = scores[top]
    total = float(weights.sum())
    if total <= 0.0:
        weights = np.ones(len(top))
        total = float(len(top))
    w = float(sum(wt * boxes[i].w for wt, i in zip(weights, top)) / total)
    h = float(sum(wt * boxes[i].h for wt, i in zip(weights, top)) / total)
    return OrientedBox(label.x, label.y, w, h, boxes[best].theta)
