"""Config round-trip, training-loop contracts, pseudo export, metrics."""

import dataclasses
import json

import numpy as np
import pytest

from pointbox.angles import AngleConfig, init_angle_model
from pointbox.config import (
    RunConfig,
    config_hash,
    from_json_dict,
    load_config,
    save_config,
    to_json_dict,
)
from pointbox.data import SceneConfig
from pointbox.geometry import OrientedBox
from pointbox.metrics import (
    MetricsResult,
    evaluate,
    metrics_dict,
    write_metrics,
)
from pointbox.mil import init_mil_params
from pointbox.pipeline import (
    PipelineError,
    PseudoLabel,
    baseline_miou,
    build_corpus,
    generate_pseudo,
    heldout_corpus,
    read_pseudo_dir,
    train,
    training_corpus,
    write_pseudo_dir,
)
from pointbox.proposals import BagLayout

# small canvas keeps the loop tests fast
FAST = RunConfig(
    scene=SceneConfig(height=128, width=128, count_range=(2, 3), scale_range=(16, 40)),
    layout=BagLayout(scales=(16.0, 32.0), ratios=(0.5, 1.0, 2.0)),
    n_scenes=2,
    n_eval_scenes=2,
    total_steps=12,
    warmup_steps=4,
    learning_rate=0.05,
    seed=3,
)


class TestConfig:
    def test_json_round_trip(self):
        cfg = dataclasses.replace(FAST, burn_fractions=(0.4, 0.7), out_dir="/tmp/x")
        assert from_json_dict(json.loads(json.dumps(to_json_dict(cfg)))) == cfg

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "run.json"
        save_config(FAST, path)
        assert load_config(path) == FAST

    def test_hash_ignores_out_dir(self):
        a = dataclasses.replace(FAST, out_dir="/a")
        b = dataclasses.replace(FAST, out_dir="/b")
        assert config_hash(a) == config_hash(b)
        assert len(config_hash(a)) == 64

    def test_hash_tracks_run_fields(self):
        assert config_hash(FAST) != config_hash(dataclasses.replace(FAST, seed=4))
        assert config_hash(FAST) != config_hash(
            dataclasses.replace(FAST, learning_rate=0.06)
        )

    def test_schedule_derived_from_fractions(self):
        cfg = dataclasses.replace(FAST, total_steps=200)
        assert (cfg.schedule.burn_in_1, cfg.schedule.burn_in_2) == (100, 134)

    def test_validation(self):
        with pytest.raises(ValueError):
            dataclasses.replace(FAST, burn_fractions=(0.7, 0.4))
        with pytest.raises(ValueError):
            dataclasses.replace(FAST, learning_rate=0.0)
        with pytest.raises(ValueError):
            dataclasses.replace(FAST, n_scenes=0)


class TestCorpus:
    def test_deterministic_and_cached(self):
        a = build_corpus(FAST, 2)
        b = build_corpus(FAST, 2)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.scene.image, sb.scene.image)
            assert sa.labels == sb.labels
            for fa, fb in zip(sa.base_feats, sb.base_feats):
                assert np.array_equal(fa, fb)

    def test_heldout_disjoint_from_training(self):
        train_set = training_corpus(FAST)
        held = heldout_corpus(FAST)
        for s in held:
            for t in train_set:
                assert not np.array_equal(s.scene.image, t.scene.image)


class TestTraining:
    def test_zero_steps_returns_initialization(self):
        cfg = dataclasses.replace(FAST, total_steps=0)
        result = train(cfg)
        mil0 = init_mil_params(np.random.default_rng(cfg.seed + 1), 4, hidden=cfg.mil_hidden)
        ang0 = init_angle_model(np.random.default_rng(cfg.seed + 2), cfg.angle)
        for got, want in zip(result.mil.parameters(), mil0.parameters()):
            assert np.array_equal(got.data, want.data)
        for got, want in zip(result.angle.parameters(), ang0.parameters()):
            assert np.array_equal(got.data, want.data)
        assert result.log == []

    def test_same_seed_identical_logs(self):
        a = train(dataclasses.replace(FAST, total_steps=8))
        b = train(dataclasses.replace(FAST, total_steps=8))
        assert a.log == b.log

    def test_components_switch_at_burn_ins(self):
        # 12 steps at (0.5, 0.67) switch after steps 5 and 7
        result = train(FAST)
        for entry in result.log:
            keys = set(entry["components"])
            assert {"mil_original", "mil_refined"} <= keys
            assert sum(entry["gates"]) == 1.0
            if entry["step"] < 6:
                assert entry["stage"] == 1
                assert keys == {"mil_original", "mil_refined", "mil_resized", "scale_consistency"}
            else:
                assert entry["stage"] == (2 if entry["step"] < 8 else 3)
                assert keys == {"mil_original", "mil_refined", "mil_rotflp", "angle_consistency"}

    def test_log_file_matches_returned_log(self, tmp_path):
        path = tmp_path / "loss.jsonl"
        result = train(dataclasses.replace(FAST, total_steps=6), log_path=path)
        lines = [json.loads(s) for s in path.read_text().splitlines()]
        assert lines == result.log

    def test_angle_only_mode_trains_angle_model_alone(self):
        cfg = dataclasses.replace(FAST, angle_only=True, total_steps=6)
        result = train(cfg)
        assert all(set(e["components"]) == {"angle_consistency"} for e in result.log)
        assert all("stage" not in e for e in result.log)
        mil0 = init_mil_params(np.random.default_rng(cfg.seed + 1), 4, hidden=cfg.mil_hidden)
        for got, want in zip(result.mil.parameters(), mil0.parameters()):
            assert np.array_equal(got.data, want.data)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts_with_named_step(self):
        cfg = dataclasses.replace(FAST, learning_rate=1e150, warmup_steps=1, total_steps=30)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(PipelineError, match="at step"):
                train(cfg)


@pytest.fixture(scope="module")
def run():
    corpus = training_corpus(FAST)
    result = train(FAST, corpus=corpus)
    return corpus, result, generate_pseudo(result.mil, result.angle, corpus, FAST)


class TestPseudo:
    def test_one_box_per_point(self, run):
        corpus, _, pseudo = run
        assert [len(p) for p in pseudo] == [len(s.labels) for s in corpus]

    def test_boxes_centered_on_points_with_confidence(self, run):
        corpus, _, pseudo = run
        for sample, scene_out in zip(corpus, pseudo):
            for lab, p in zip(sample.labels, scene_out):
                assert (p.box.cx, p.box.cy) == (lab.x, lab.y)
                assert 0.0 <= p.confidence <= 1.0
                assert p.class_id == lab.class_id
                assert p.source_index == lab.source_index

    def test_export_round_trip(self, run, tmp_path):
        _, _, pseudo = run
        write_pseudo_dir(tmp_path / "pseudo", pseudo)
        back = read_pseudo_dir(tmp_path / "pseudo")
        assert [len(s) for s in back] == [len(s) for s in pseudo]
        for orig_scene, back_scene in zip(pseudo, back):
            for a, b in zip(orig_scene, back_scene):
                assert b.box.cx == pytest.approx(a.box.cx, abs=1e-3)
                assert b.box.w == pytest.approx(a.box.w, abs=1e-3)
                assert b.confidence == a.confidence
                assert b.source_index == a.source_index

    def test_baseline_in_unit_range(self, run):
        corpus, _, _ = run
        value = baseline_miou(corpus, FAST.layout)
        assert 0.05 < value < 1.0


def box(cx, cy, w=20.0, h=10.0, theta=0.0):
    return OrientedBox(cx, cy, w, h, theta)


class TestMetrics:
    def test_perfect_pseudo(self):
        gt = [[(box(30, 30), 0), (box(90, 90), 1)]]
        pseudo = [[
            PseudoLabel(box=box(30, 30), class_id=0, confidence=0.9, source_index=0),
            PseudoLabel(box=box(90, 90), class_id=1, confidence=0.8, source_index=1),
        ]]
        result = evaluate(pseudo, gt)
        assert result.miou == pytest.approx(1.0)
        assert result.ap50 == pytest.approx(1.0)
        assert result.per_class == {"class0": pytest.approx(1.0), "class1": pytest.approx(1.0)}

    def test_low_iou_detection_scores_zero_ap(self):
        gt = [[(box(30, 30), 0)]]
        # shifted enough for IoU 1/3 < 0.5
        pseudo = [[PseudoLabel(box=box(40, 30), class_id=0, confidence=0.9, source_index=0)]]
        result = evaluate(pseudo, gt)
        assert result.ap50 == 0.0
        assert 0.0 < result.miou < 0.5

    def test_ranked_tp_fp_tp_hand_value(self):
        # precision-recall points (1, 1/2), (1/2, 1/2), (2/3, 1)
        gt = [[(box(30, 30), 0), (box(90, 90), 0)]]
        pseudo = [[
            PseudoLabel(box=box(30, 30), class_id=0, confidence=0.9, source_index=0),
            PseudoLabel(box=box(160, 160), class_id=0, confidence=0.8, source_index=1),
            PseudoLabel(box=box(90, 90), class_id=0, confidence=0.7, source_index=1),
        ]]
        result = evaluate(pseudo, gt)
        assert result.ap50 == pytest.approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0), abs=1e-9)

    def test_mean_over_classes(self):
        gt = [[(box(30, 30), 0), (box(90, 90), 1)]]
        pseudo = [[
            PseudoLabel(box=box(30, 30), class_id=0, confidence=0.9, source_index=0),
            PseudoLabel(box=box(200, 200), class_id=1, confidence=0.9, source_index=1),
        ]]
        result = evaluate(pseudo, gt)
        assert result.per_class["class0"] == pytest.approx(1.0)
        assert result.per_class["class1"] == 0.0
        assert result.ap50 == pytest.approx(0.5)

    def test_duplicate_detection_counts_once(self):
        gt = [[(box(30, 30), 0)]]
        pseudo = [[
            PseudoLabel(box=box(30, 30), class_id=0, confidence=0.9, source_index=0),
            PseudoLabel(box=box(30, 30), class_id=0, confidence=0.8, source_index=0),
        ]]
        result = evaluate(pseudo, gt)
        # second match of the same object is a false positive
        assert result.ap50 == pytest.approx(1.0)

    def test_class_without_gt_excluded(self):
        gt = [[(box(30, 30), 0)]]
        pseudo = [[
            PseudoLabel(box=box(30, 30), class_id=0, confidence=0.9, source_index=0),
            PseudoLabel(box=box(90, 90), class_id=3, confidence=0.9, source_index=0),
        ]]
        result = evaluate(pseudo, gt)
        assert set(result.per_class) == {"class0"}
        assert result.ap50 == pytest.approx(1.0)

    def test_bad_source_index_rejected(self):
        gt = [[(box(30, 30), 0)]]
        pseudo = [[PseudoLabel(box=box(30, 30), class_id=0, confidence=0.9, source_index=5)]]
        with pytest.raises(ValueError, match="source index"):
            evaluate(pseudo, gt)

    def test_scene_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            evaluate([[]], [[], []])

    def test_metrics_json_shape(self, tmp_path):
        result = MetricsResult(miou=0.5, ap50=0.25, per_class={"class0": 0.25})
        payload = metrics_dict(result, "ab" * 32)
        assert set(payload) == {"miou", "ap50", "per_class", "config_hash"}
        path = tmp_path / "metrics.json"
        write_metrics(path, result, "ab" * 32)
        assert json.loads(path.read_text()) == payload
