"""Scale-consistency loss between the original and resized views.

Bag scores from both views are regrouped by proposal scale; each scale
group's ratio-by-class score row should describe the *same* object content
in both views (the resized bag is the original bag scaled with the canvas),
so the loss drives the per-group cosine distance of both streams to zero.
The instance stream is weighted 2.0 against 1.0 for the class stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .mil import ScorePair
from .proposals import BagLayout, regroup_scores

INS_WEIGHT = 2.0
CLS_WEIGHT = 1.0


@dataclass
class GroupSimilarity:
    """Per scale-group cosine distances (1 - cos) for both streams.

    degenerate[g] marks groups where either view's row had zero norm; their
    distance is pinned to the constant 1 and carries no gradient.
    """

    ins: Tensor  # (G,)
    cls: Tensor  # (G,)
    degenerate: np.ndarray  # (G,) bool


def _stream_distance(a: Tensor, b: Tensor, layout: BagLayout, n_classes: int) -> tuple[Tensor, np.ndarray]:
    ga = regroup_scores(a, layout, n_classes)
    gb = regroup_scores(b, layout, n_classes)
    norm_a = np.linalg.norm(ga.data, axis=1)
    norm_b = np.linalg.norm(gb.data, axis=1)
    degenerate = (norm_a == 0.0) | (norm_b == 0.0)
    if degenerate.any():
        # Blend degenerate rows out of the graph (zero mask kills their
        # gradient), run the cosine on safe constants, then pin their
        # distance to the constant 1.
        g, k = ga.shape
        live = np.where(degenerate, 0.0, 1.0)
        fill = np.zeros((g, k))
        fill[degenerate, 0] = 1.0
        ga = ga * live.reshape(g, 1) + fill
        gb = gb * live.reshape(g, 1) + fill
        dist = 1.0 - ga.cosine_similarity(gb, axis=1)
        return dist * live + degenerate.astype(np.float64), degenerate
    cos = ga.cosine_similarity(gb, axis=1)
    return 1.0 - cos, degenerate


def group_similarity(
    original: ScorePair, resized: ScorePair, layout: BagLayout, n_classes: int
) -> GroupSimilarity:
    """Cosine distances per scale group for one label's bag pair."""
    ins, deg_i = _stream_distance(original.ins, resized.ins, layout, n_classes)
    cls, deg_c = _stream_distance(original.cls, resized.cls, layout, n_classes)
    return GroupSimilarity(ins=ins, cls=cls, degenerate=deg_i | deg_c)


def ssc_loss(
    pairs: list[tuple[ScorePair, ScorePair]],
    layout: BagLayout,
    n_classes: int,
    ins_weight: float = INS_WEIGHT,
    cls_weight: float = CLS_WEIGHT,
    beta: float = 1.0,
) -> Tensor:
    """Sum over labels and scale groups of the weighted smooth-L1 pull of
    both streams' cosine distances toward zero."""
    if not pairs:
        raise ValueError("ssc_loss needs at least one bag pair")
    total = None
    for original, resized in pairs:
        sims = group_similarity(original, resized, layout, n_classes)
        term = (
            sims.ins.smooth_l1(0.0, beta=beta).sum() * ins_weight
            + sims.cls.smooth_l1(0.0, beta=beta).sum() * cls_weight
        )
        total = term if total is None else total + term
    return total
