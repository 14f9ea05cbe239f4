"""Stage boundaries, gate arithmetic, and loss composition contracts."""

import pytest

from pointbox.autodiff import Tensor
from pointbox.scheduler import (
    ANGLE_CONSISTENCY,
    MIL_ORIGINAL,
    MIL_REFINED,
    MIL_RESIZED,
    MIL_ROTFLP,
    SCALE_CONSISTENCY,
    Stage,
    StageSchedule,
    StageState,
    default_schedule,
    stage_at,
    total_loss,
)

SCHED = StageSchedule(burn_in_1=100, burn_in_2=134, total_steps=200)


def comp(**kwargs):
    return {k: Tensor(float(v)) for k, v in kwargs.items()}


class TestStages:
    def test_step_zero_is_scale_stage(self):
        state = stage_at(0, SCHED)
        assert state.stage is Stage.SCALE_AUG
        assert state.gates == (1.0, 0.0)

    def test_boundary_belongs_to_later_stage(self):
        assert stage_at(99, SCHED).stage is Stage.SCALE_AUG
        assert stage_at(100, SCHED).stage is Stage.ANGLE_BURN
        assert stage_at(133, SCHED).stage is Stage.ANGLE_BURN
        assert stage_at(134, SCHED).stage is Stage.DENSE_MATCH
        assert stage_at(199, SCHED).stage is Stage.DENSE_MATCH

    def test_late_stages_activate_rotflp_view(self):
        for step in (100, 134, 199):
            assert stage_at(step, SCHED).gates == (0.0, 1.0)

    def test_exactly_one_gate_every_step(self):
        for step in range(SCHED.total_steps):
            assert sum(stage_at(step, SCHED).gates) == 1.0

    def test_step_out_of_range(self):
        with pytest.raises(ValueError):
            stage_at(-1, SCHED)
        with pytest.raises(ValueError):
            stage_at(200, SCHED)

    def test_schedule_ordering_enforced(self):
        with pytest.raises(ValueError):
            StageSchedule(burn_in_1=0, burn_in_2=10, total_steps=20)
        with pytest.raises(ValueError):
            StageSchedule(burn_in_1=10, burn_in_2=10, total_steps=20)
        with pytest.raises(ValueError):
            StageSchedule(burn_in_1=5, burn_in_2=20, total_steps=20)

    def test_default_fractions(self):
        sched = default_schedule(200)
        assert (sched.burn_in_1, sched.burn_in_2) == (100, 134)
        # the 12-epoch pattern: switches at epochs 6 and 8
        twelve = default_schedule(12)
        assert (twelve.burn_in_1, twelve.burn_in_2) == (6, 8)

    def test_literal_wiring_swaps_views(self):
        assert stage_at(0, SCHED, literal_wiring=True).gates == (0.0, 1.0)
        assert stage_at(150, SCHED, literal_wiring=True).gates == (1.0, 0.0)
        for step in range(0, 200, 7):
            assert sum(stage_at(step, SCHED, literal_wiring=True).gates) == 1.0


class TestTotalLoss:
    S1 = StageState(stage=Stage.SCALE_AUG, resized_gate=1.0, rotflp_gate=0.0)
    S3 = StageState(stage=Stage.DENSE_MATCH, resized_gate=0.0, rotflp_gate=1.0)

    def test_scale_stage_sum(self):
        c = comp(mil_original=1, mil_refined=2, mil_resized=3, scale_consistency=4)
        assert float(total_loss(c, self.S1).data) == 10.0

    def test_rotflp_stage_zero_terms(self):
        c = comp(mil_original=1, mil_refined=2, mil_rotflp=0, angle_consistency=0)
        assert float(total_loss(c, self.S3).data) == 3.0

    def test_inactive_component_rejected(self):
        c = comp(
            mil_original=1, mil_refined=2, mil_resized=3,
            scale_consistency=4, angle_consistency=5,
        )
        with pytest.raises(ValueError, match="angle_consistency"):
            total_loss(c, self.S1)

    def test_missing_gated_component_rejected(self):
        c = comp(mil_original=1, mil_refined=2, mil_rotflp=3)
        with pytest.raises(ValueError, match="angle_consistency"):
            total_loss(c, self.S3)

    def test_missing_original_rejected(self):
        c = comp(mil_refined=2, mil_resized=3, scale_consistency=4)
        with pytest.raises(ValueError, match="mil_original"):
            total_loss(c, self.S1)

    def test_boundary_continuity_when_new_terms_zero(self):
        before = comp(mil_original=1.5, mil_refined=0.5, mil_resized=0, scale_consistency=0)
        after = comp(mil_original=1.5, mil_refined=0.5, mil_rotflp=0, angle_consistency=0)
        assert float(total_loss(before, self.S1).data) == float(total_loss(after, self.S3).data)

    def test_gradient_flows_through_gated_terms(self):
        c = {
            MIL_ORIGINAL: Tensor(1.0, requires_grad=True),
            MIL_REFINED: Tensor(2.0, requires_grad=True),
            MIL_ROTFLP: Tensor(3.0, requires_grad=True),
            ANGLE_CONSISTENCY: Tensor(4.0, requires_grad=True),
        }
        total_loss(c, self.S3).backward()
        assert all(float(t.grad) == 1.0 for t in c.values())

    def test_component_names_cover_both_views(self):
        assert {MIL_RESIZED, SCALE_CONSISTENCY, MIL_ROTFLP, ANGLE_CONSISTENCY} == {
            "mil_resized", "scale_consistency", "mil_rotflp", "angle_consistency",
        }
