"""Pseudo-label quality: mean rotated IoU and AP at IoU 0.5.

mIoU pairs each pseudo box with its source ground-truth object, so it needs
no matching step.  AP ranks detections by confidence across all scenes,
matches greedily per class at rotated-IoU 0.5, and integrates the
precision-recall curve with all-point interpolation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import class_name
from .geometry import OrientedBox, rotated_iou
from .pipeline import PseudoLabel

IOU_THRESHOLD = 0.5

SceneObjects = list[tuple[OrientedBox, int]]


@dataclass(frozen=True)
class MetricsResult:
    miou: float
    ap50: float
    per_class: dict[str, float]


def _average_precision(tp_flags: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from confidence-ordered match flags."""
    if n_gt == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    rec = tp / n_gt
    prec = tp / (tp + fp)
    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    jumps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[jumps + 1] - mrec[jumps]) * mpre[jumps + 1]))


def _class_ap(pseudo: list[list[PseudoLabel]], gt: list[SceneObjects], cid: int) -> float:
    n_gt = sum(1 for objs in gt for _, c in objs if c == cid)
    dets = [
        (p.confidence, si, p.box)
        for si, scene_out in enumerate(pseudo)
        for p in scene_out
        if p.class_id == cid
    ]
    order = np.argsort(-np.array([d[0] for d in dets]), kind="stable") if dets else []
    matched: list[set[int]] = [set() for _ in gt]
    flags = np.zeros(len(dets), dtype=bool)
    for rank, di in enumerate(order):
        _, si, box = dets[di]
        best_iou, best_j = 0.0, -1
        for j, (gbox, gcid) in enumerate(gt[si]):
            if gcid != cid or j in matched[si]:
                continue
            iou = rotated_iou(box, gbox)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_iou >= IOU_THRESHOLD:
            flags[rank] = True
            matched[si].add(best_j)
    return _average_precision(flags, n_gt)


def evaluate(pseudo: list[list[PseudoLabel]], gt: list[SceneObjects]) -> MetricsResult:
    """mIoU over source-paired boxes plus per-class and mean AP50.

    Classes with no ground truth are excluded from the mean; a pseudo label
    whose source index has no ground-truth object is a hard error.
    """
    if len(pseudo) != len(gt):
        raise ValueError(f"{len(pseudo)} pseudo scenes vs {len(gt)} ground-truth scenes")
    ious = []
    for si, (scene_out, objs) in enumerate(zip(pseudo, gt)):
        for p in scene_out:
            if not (0 <= p.source_index < len(objs)):
                raise ValueError(f"scene {si}: source index {p.source_index} has no ground-truth object")
            ious.append(rotated_iou(p.box, objs[p.source_index][0]))
    miou = float(np.mean(ious)) if ious else 0.0
    classes = sorted({c for objs in gt for _, c in objs})
    per_class = {class_name(c): _class_ap(pseudo, gt, c) for c in classes}
    ap50 = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return MetricsResult(miou=miou, ap50=ap50, per_class=per_class)


def metrics_dict(result: MetricsResult, cfg_hash: str) -> dict:
    return {
        "miou": result.miou,
        "ap50": result.ap50,
        "per_class": dict(result.per_class),
        "config_hash": cfg_hash,
    }


def write_metrics(path: str | Path, result: MetricsResult, cfg_hash: str) -> None:
    Path(path).write_text(json.dumps(metrics_dict(result, cfg_hash), indent=2, sort_keys=True) + "\n")
