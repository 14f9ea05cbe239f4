"""End-to-end orchestration: corpus, staged training, pseudo-label export.

One training step scores proposal bags on the original view and on the
stage's enhanced view, composes the gated total loss, and applies SGD.
Everything is driven by RunConfig-derived seed streams: corpus content,
point jitter, parameter init, and per-step view sampling each get their own
generator, so a config determines the run bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .angles import (
    AngleModel,
    angle_consistency_loss,
    bag_angles,
    feature_alignment_offset,
    init_angle_model,
    predict_pyramid,
    pyramid_inputs,
)
from .autodiff import SGD, NonFiniteError, Tensor
from .config import RunConfig
from .consistency import ssc_loss
from .data import (
    PointLabel,
    Scene,
    class_name,
    generate_scene,
    parse_class_name,
    read_dota,
    scene_point_labels,
    write_dota,
)
from .features import BoxFeaturizer
from .geometry import OrientedBox, rotated_iou
from .mil import (
    MILParams,
    focal_loss,
    init_mil_params,
    mil_loss,
    score_bag,
    select_pseudo_obb,
)
from .proposals import BagLayout, ProposalBag, generate_bag, oriented_boxes, proposal_box
from .scheduler import (
    ANGLE_CONSISTENCY,
    MIL_ORIGINAL,
    MIL_REFINED,
    MIL_RESIZED,
    MIL_ROTFLP,
    SCALE_CONSISTENCY,
    Stage,
    StageState,
    stage_at,
    total_loss,
)
from .views import build_resized, build_rotflp

SCENE_SEED_STRIDE = 100003
LABEL_SEED_OFFSET = 51


class PipelineError(RuntimeError):
    """Aborted run; the message names the offending step and component."""


@dataclass
class SceneSample:
    """A scene with everything per-step work reuses: point labels, their
    proposal bags, cached axis-aligned bag features, and the original
    image's pyramid inputs."""

    scene: Scene
    labels: list[PointLabel]
    bags: list[ProposalBag]
    featurizer: BoxFeaturizer
    base_feats: list[np.ndarray]
    pyramid_in: list[tuple[np.ndarray, tuple[int, int]]]


@dataclass(frozen=True)
class PseudoLabel:
    box: OrientedBox
    class_id: int
    confidence: float
    source_index: int


@dataclass
class TrainResult:
    mil: MILParams
    angle: AngleModel
    log: list[dict]
    cfg: RunConfig


def build_sample(scene: Scene, labels: list[PointLabel], cfg: RunConfig) -> SceneSample:
    bags = [generate_bag(lab, cfg.layout) for lab in labels]
    fz = BoxFeaturizer(scene.image)
    return SceneSample(
        scene=scene,
        labels=labels,
        bags=bags,
        featurizer=fz,
        base_feats=[fz.bag_features(bag) for bag in bags],
        pyramid_in=pyramid_inputs(scene.image, cfg.angle),
    )


def build_corpus(cfg: RunConfig, n: int, offset: int = 0) -> list[SceneSample]:
    """n seeded scenes with point labels; offset shifts the seed block so a
    held-out set never overlaps the training set."""
    out = []
    for i in range(n):
        scene_seed = cfg.seed * SCENE_SEED_STRIDE + offset + i
        scene = generate_scene(cfg.scene, seed=scene_seed)
        labels = scene_point_labels(scene, np.random.default_rng(scene_seed + LABEL_SEED_OFFSET))
        out.append(build_sample(scene, labels, cfg))
    return out


def training_corpus(cfg: RunConfig) -> list[SceneSample]:
    return build_corpus(cfg, cfg.n_scenes)


def heldout_corpus(cfg: RunConfig) -> list[SceneSample]:
    return build_corpus(cfg, cfg.n_eval_scenes, offset=cfg.n_scenes)


def _guard(name: str, step: int, fn):
    """Evaluate one loss component, naming it in any non-finite abort."""
    try:
        value = fn()
    except NonFiniteError as exc:
        raise PipelineError(
            f"non-finite value while computing '{name}' at step {step}: {exc}"
        ) from exc
    if not np.all(np.isfinite(value.data)):
        raise PipelineError(f"non-finite loss component '{name}' at step {step}")
    return value


def _full_step(
    cfg: RunConfig,
    sample: SceneSample,
    step: int,
    state: StageState,
    mil: MILParams,
    angle: AngleModel,
    rng: np.random.Generator,
) -> dict[str, Tensor]:
    n_classes = cfg.scene.n_classes
    class_ids = [lab.class_id for lab in sample.labels]
    components: dict[str, Tensor] = {}

    pyr_o = None
    if state.stage is Stage.DENSE_MATCH:
        # dense matching: attach per-proposal angles (values, not graph) so
        # the MIL streams score oriented candidates
        pyr_o = predict_pyramid(angle, sample.pyramid_in, cfg.angle)
        feats_o = [
            sample.featurizer.bag_features(bag, bag_angles(pyr_o, bag.boxes))
            for bag in sample.bags
        ]
    else:
        feats_o = sample.base_feats
    base_pairs = [score_bag(mil, f) for f in feats_o]
    refined_pairs = [score_bag(mil, f, refined=True) for f in feats_o]
    components[MIL_ORIGINAL] = _guard(
        MIL_ORIGINAL, step,
        lambda: mil_loss([p.bag_score for p in base_pairs], class_ids, n_classes),
    )
    components[MIL_REFINED] = _guard(
        MIL_REFINED, step,
        lambda: focal_loss(
            [p.bag_score for p in refined_pairs], class_ids, n_classes,
            gamma=cfg.focal_gamma, balance=cfg.focal_balance,
        ),
    )

    if state.resized_gate == 1.0:
        vb = build_resized(sample.scene, sample.labels, rng)
        fz = BoxFeaturizer(vb.enhanced.image)
        # resized bags are the original boxes scaled by sigma, keeping
        # index (g, r) aligned across views: content features then match
        # while any score leaning on absolute geometry is inconsistent
        sigma = vb.transform.sigma
        scaled = BagLayout(
            scales=tuple(sigma * s for s in cfg.layout.scales), ratios=cfg.layout.ratios
        )
        scores, ids, pairs = [], [], []
        for i, (lab, ok) in enumerate(zip(vb.enhanced_labels, vb.valid)):
            if not ok:
                continue
            pr = score_bag(mil, fz.bag_features(generate_bag(lab, scaled)))
            scores.append(pr.bag_score)
            ids.append(lab.class_id)
            pairs.append((base_pairs[i], pr))
        components[MIL_RESIZED] = _guard(
            MIL_RESIZED, step,
            lambda: mil_loss(scores, ids, n_classes) if scores else Tensor(0.0),
        )
        components[SCALE_CONSISTENCY] = _guard(
            SCALE_CONSISTENCY, step,
            lambda: ssc_loss(
                pairs, cfg.layout, n_classes,
                ins_weight=cfg.ssc_ins_weight, cls_weight=cfg.ssc_cls_weight,
            ) if pairs else Tensor(0.0),
        )

    if state.rotflp_gate == 1.0:
        vb = build_rotflp(sample.scene, sample.labels, rng)
        fz = BoxFeaturizer(vb.enhanced.image)
        scores, ids = [], []
        for lab, ok in zip(vb.enhanced_labels, vb.valid):
            if not ok:
                continue
            pr = score_bag(mil, fz.bag_features(generate_bag(lab, cfg.layout)))
            scores.append(pr.bag_score)
            ids.append(lab.class_id)
        components[MIL_ROTFLP] = _guard(
            MIL_ROTFLP, step,
            lambda: mil_loss(scores, ids, n_classes) if scores else Tensor(0.0),
        )
        if pyr_o is None:
            pyr_o = predict_pyramid(angle, sample.pyramid_in, cfg.angle)
        pyr_e = predict_pyramid(angle, pyramid_inputs(vb.enhanced.image, cfg.angle), cfg.angle)
        components[ANGLE_CONSISTENCY] = _guard(
            ANGLE_CONSISTENCY, step,
            lambda: angle_consistency_loss(
                pyr_o, pyr_e, sample.labels, vb.enhanced_labels, vb.valid, vb.transform
            ),
        )
    return components


def _angle_only_step(
    cfg: RunConfig,
    sample: SceneSample,
    step: int,
    angle: AngleModel,
    rng: np.random.Generator,
) -> dict[str, Tensor]:
    vb = build_rotflp(sample.scene, sample.labels, rng)
    pyr_o = predict_pyramid(angle, sample.pyramid_in, cfg.angle)
    pyr_e = predict_pyramid(angle, pyramid_inputs(vb.enhanced.image, cfg.angle), cfg.angle)
    loss = _guard(
        ANGLE_CONSISTENCY, step,
        lambda: angle_consistency_loss(
            pyr_o, pyr_e, sample.labels, vb.enhanced_labels, vb.valid, vb.transform
        ),
    )
    return {ANGLE_CONSISTENCY: loss}


def train(
    cfg: RunConfig,
    corpus: list[SceneSample] | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Run the staged loop; returns trained params plus the step-wise log.

    Each log entry records the stage, the gate pair, and every component
    value, so the stage switches are auditable after the fact.
    """
    if corpus is None:
        corpus = training_corpus(cfg)
    mil = init_mil_params(
        np.random.default_rng(cfg.seed + 1), cfg.scene.n_classes, hidden=cfg.mil_hidden
    )
    angle = init_angle_model(np.random.default_rng(cfg.seed + 2), cfg.angle)
    params = angle.parameters() if cfg.angle_only else mil.parameters() + angle.parameters()
    # the angle head keeps its own optimizer so its warmup can start when its
    # loss first fires (the late stages): a fresh head hit with full-size
    # steps drifts to the quarter-turn-offset solution before the flip terms
    # can anchor it, and nothing later can tell the two apart
    opt_mil = SGD(
        mil.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )
    opt_angle = SGD(
        angle.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )
    angle_active_since: int | None = None
    angle_init = [p.data.copy() for p in angle.parameters()]
    angle_lr_mult = 1.0
    angle_resets = 0
    next_alignment_check: int | None = None
    probe_inputs = [s.pyramid_in for s in corpus[:16]]
    rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []
    avg_from = cfg.total_steps - int(round(cfg.tail_average_frac * cfg.total_steps))
    avg_sums: list[np.ndarray] | None = None
    avg_count = 0
    fh = open(log_path, "w") if log_path is not None else None
    try:
        for step in range(cfg.total_steps):
            sample = corpus[step % len(corpus)]
            try:
                if cfg.angle_only:
                    state = None
                    components = _angle_only_step(cfg, sample, step, angle, rng)
                else:
                    state = stage_at(step, cfg.schedule, cfg.literal_gate_wiring)
                    components = _full_step(cfg, sample, step, state, mil, angle, rng)
                total = (
                    components[ANGLE_CONSISTENCY]
                    if state is None
                    else total_loss(components, state)
                )
                total.backward()
            except NonFiniteError as exc:
                raise PipelineError(f"non-finite value at step {step}: {exc}") from exc
            if ANGLE_CONSISTENCY in components and angle_active_since is None:
                angle_active_since = step
                next_alignment_check = step + cfg.warmup_steps + 100
            warm = min(1.0, (step + 1) / cfg.warmup_steps)
            # half-cosine decay to zero; late steps polish instead of bouncing
            decay = 0.5 * (1.0 + math.cos(math.pi * step / cfg.total_steps))
            if not cfg.angle_only:
                opt_mil.step(lr_scale=warm * decay)
            if angle_active_since is not None:
                warm_a = min(1.0, (step - angle_active_since + 1) / cfg.warmup_steps)
                opt_angle.step(lr_scale=warm_a * decay * angle_lr_mult)
            opt_mil.zero_grad()
            opt_angle.zero_grad()
            entry = {
                "step": step,
                "components": {k: float(v.data) for k, v in components.items()},
                "total": float(total.data),
            }
            if state is not None:
                entry["stage"] = int(state.stage)
                entry["gates"] = list(state.gates)
            if next_alignment_check is not None and step >= next_alignment_check:
                offset = feature_alignment_offset(angle, probe_inputs, cfg.angle)
                entry["angle_alignment"] = offset
                if abs(offset) > math.pi / 4 and angle_resets < 3:
                    # the run drifted to the quarter-turn-offset solution the
                    # loss cannot penalize: restart the head from init at a
                    # gentler rate (escape odds shrink fast with step size)
                    angle_resets += 1
                    angle_lr_mult *= 0.5
                    for p, init in zip(angle.parameters(), angle_init):
                        p.data = init.copy()
                    opt_angle = SGD(
                        angle.parameters(), lr=cfg.learning_rate,
                        momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                    )
                    angle_active_since = step
                    entry["angle_reset"] = angle_resets
                    if step >= avg_from:
                        avg_sums = None
                        avg_count = 0
                        avg_from = step + int(
                            round((1.0 - cfg.tail_average_frac) * (cfg.total_steps - step))
                        )
                next_alignment_check = step + cfg.warmup_steps + 100
            if step >= avg_from:
                if avg_sums is None:
                    avg_sums = [p.data.copy() for p in params]
                else:
                    for acc, p in zip(avg_sums, params):
                        acc += p.data
                avg_count += 1
            log.append(entry)
            if fh is not None:
                fh.write(json.dumps(entry) + "\n")
    finally:
        if fh is not None:
            fh.close()
    if avg_sums is not None and avg_count > 0:
        for p, acc in zip(params, avg_sums):
            p.data = acc / avg_count
    return TrainResult(mil=mil, angle=angle, log=log, cfg=cfg)


def save_params(path: str | Path, mil: MILParams, angle: AngleModel) -> None:
    arrays = {f"mil_{i}": t.data for i, t in enumerate(mil.parameters())}
    arrays.update({f"angle_{i}": t.data for i, t in enumerate(angle.parameters())})
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path: str | Path, cfg: RunConfig) -> tuple[MILParams, AngleModel]:
    """Rebuild trained params; shapes must match what cfg would create."""
    mil = init_mil_params(np.random.default_rng(0), cfg.scene.n_classes, hidden=cfg.mil_hidden)
    angle = init_angle_model(np.random.default_rng(0), cfg.angle)
    with np.load(path) as z:
        for prefix, params in (("mil", mil.parameters()), ("angle", angle.parameters())):
            for i, t in enumerate(params):
                key = f"{prefix}_{i}"
                if key not in z:
                    raise ValueError(f"parameter file missing '{key}'")
                if z[key].shape != t.data.shape:
                    raise ValueError(
                        f"'{key}' shape {z[key].shape} does not match config shape {t.data.shape}"
                    )
                t.data = z[key].astype(np.float64)
                t.grad = np.zeros_like(t.data)
    return mil, angle


# ---- pseudo-label generation ---------------------------------------------


def generate_pseudo(
    mil: MILParams, angle: AngleModel, corpus: list[SceneSample], cfg: RunConfig
) -> list[list[PseudoLabel]]:
    """One pseudo box per point: dense angles attached to every proposal,
    then a top-k merge of the proposals ranked by both scoring streams.

    Selection multiplies the base and refined per-proposal scores at the
    label class, so a proposal must convince both heads; confidence is the
    geometric mean of the two bag scores."""
    out = []
    for sample in corpus:
        pyr = predict_pyramid(angle, sample.pyramid_in, cfg.angle)
        scene_out = []
        for lab, bag in zip(sample.labels, sample.bags):
            angles = bag_angles(pyr, bag.boxes)
            obs = oriented_boxes(bag, angles)
            feats = sample.featurizer.bag_features(bag, angles)
            base = score_bag(mil, feats)
            ref = score_bag(mil, feats, refined=True)
            col = base.product.data[:, lab.class_id] * ref.product.data[:, lab.class_id]
            box = select_pseudo_obb(obs, col, lab, k=cfg.top_k)
            conf = float(
                np.clip(
                    math.sqrt(
                        base.bag_score.data[lab.class_id] * ref.bag_score.data[lab.class_id]
                    ),
                    0.0,
                    1.0,
                )
            )
            scene_out.append(
                PseudoLabel(box=box, class_id=lab.class_id, confidence=conf, source_index=lab.source_index)
            )
        out.append(scene_out)
    return out


def baseline_miou(corpus: list[SceneSample], layout: BagLayout) -> float:
    """Best single fixed bag box, no learning: the floor any trained
    selection has to beat."""
    best = 0.0
    for scale in layout.scales:
        for ratio in layout.ratios:
            ious = []
            for sample in corpus:
                for lab in sample.labels:
                    box = proposal_box(lab, scale, ratio).to_oriented()
                    gt = sample.scene.objects[lab.source_index][0]
                    ious.append(rotated_iou(box, gt))
            if ious:
                best = max(best, float(np.mean(ious)))
    return best


# ---- pseudo-label persistence --------------------------------------------


def write_pseudo_dir(path: str | Path, pseudo: list[list[PseudoLabel]]) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = []
    for i, scene_out in enumerate(pseudo):
        write_dota(
            root / f"scene_{i:03d}.dota",
            [(p.box, class_name(p.class_id), 0) for p in scene_out],
        )
        meta.append([
            {"confidence": p.confidence, "source_index": p.source_index}
            for p in scene_out
        ])
    (root / "meta.json").write_text(json.dumps({"scenes": meta}, indent=2) + "\n")


def read_pseudo_dir(path: str | Path) -> list[list[PseudoLabel]]:
    root = Path(path)
    meta = json.loads((root / "meta.json").read_text())["scenes"]
    out = []
    for i, scene_meta in enumerate(meta):
        records = read_dota(root / f"scene_{i:03d}.dota")
        if len(records) != len(scene_meta):
            raise ValueError(f"scene {i}: {len(records)} boxes but {len(scene_meta)} meta rows")
        out.append([
            PseudoLabel(
                box=box,
                class_id=parse_class_name(name),
                confidence=m["confidence"],
                source_index=m["source_index"],
            )
            for (box, name, _), m in zip(records, scene_meta)
        ])
    return out
