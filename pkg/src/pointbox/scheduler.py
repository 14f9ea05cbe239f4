"""Progressive training stages and total-loss composition.

Training walks three stages split by two burn-in steps.  The first stage
pairs the original view with a resized view (teaching scale handling), the
later two switch the enhanced view to a rotated-or-flipped one (teaching
angles, then attaching dense angles to proposals).  Exactly one enhanced
view is active at any step; its loss terms are gated in, everything else is
a contract violation rather than a silent zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .autodiff import Tensor

MIL_ORIGINAL = "mil_original"
MIL_REFINED = "mil_refined"
MIL_RESIZED = "mil_resized"
MIL_ROTFLP = "mil_rotflp"
SCALE_CONSISTENCY = "scale_consistency"
ANGLE_CONSISTENCY = "angle_consistency"

ALWAYS_ON = (MIL_ORIGINAL, MIL_REFINED)
RESIZED_GROUP = (MIL_RESIZED, SCALE_CONSISTENCY)
ROTFLP_GROUP = (MIL_ROTFLP, ANGLE_CONSISTENCY)


class Stage(enum.IntEnum):
    SCALE_AUG = 1  # resized view + scale consistency
    ANGLE_BURN = 2  # rot/flp view + angle consistency
    DENSE_MATCH = 3  # same losses as 2, dense angles attached to proposals


@dataclass(frozen=True)
class StageSchedule:
    burn_in_1: int
    burn_in_2: int
    total_steps: int

    def __post_init__(self):
        if not (0 < self.burn_in_1 < self.burn_in_2 < self.total_steps):
            raise ValueError(
                f"need 0 < {self.burn_in_1} < {self.burn_in_2} < {self.total_steps}"
            )


def default_schedule(total_steps: int, fractions: tuple[float, float] = (0.5, 0.67)) -> StageSchedule:
    """Burn-ins at fixed fractions of the run (defaults mirror switching at
    epochs 6 and 8 of a 12-epoch schedule)."""
    b1 = round(fractions[0] * total_steps)
    b2 = round(fractions[1] * total_steps)
    return StageSchedule(burn_in_1=b1, burn_in_2=b2, total_steps=total_steps)


@dataclass(frozen=True)
class StageState:
    stage: Stage
    resized_gate: float
    rotflp_gate: float

    @property
    def gates(self) -> tuple[float, float]:
        return (self.resized_gate, self.rotflp_gate)


def stage_at(step: int, sched: StageSchedule, literal_wiring: bool = False) -> StageState:
    """Stage and gate pair for a step; boundaries belong to the later stage.

    literal_wiring swaps which enhanced view each stage activates; the
    default follows the staged narrative (resized first, rot/flp after).
    """
    if not (0 <= step < sched.total_steps):
        raise ValueError(f"step {step} outside [0, {sched.total_steps})")
    if step < sched.burn_in_1:
        stage = Stage.SCALE_AUG
    elif step < sched.burn_in_2:
        stage = Stage.ANGLE_BURN
    else:
        stage = Stage.DENSE_MATCH
    resized_first = not literal_wiring
    if (stage is Stage.SCALE_AUG) == resized_first:
        return StageState(stage=stage, resized_gate=1.0, rotflp_gate=0.0)
    return StageState(stage=stage, resized_gate=0.0, rotflp_gate=1.0)


def total_loss(components: dict[str, Tensor], state: StageState) -> Tensor:
    """Gate-weighted sum of the step's loss components.

    The component dict must contain exactly the active terms: both original
    view losses always, plus the enhanced-view pair the gates select.
    Missing active components and supplied inactive ones both raise.
    """
    expected = set(ALWAYS_ON)
    if state.resized_gate == 1.0:
        expected.update(RESIZED_GROUP)
    if state.rotflp_gate == 1.0:
        expected.update(ROTFLP_GROUP)
    missing = expected - components.keys()
    if missing:
        raise ValueError(f"missing loss components: {sorted(missing)}")
    extra = components.keys() - expected
    if extra:
        raise ValueError(f"inactive loss components supplied: {sorted(extra)}")

    total = components[MIL_ORIGINAL] + components[MIL_REFINED]
    if state.resized_gate == 1.0:
        total = total + (components[MIL_RESIZED] + components[SCALE_CONSISTENCY]) * state.resized_gate
    if state.rotflp_gate == 1.0:
        total = total + (components[MIL_ROTFLP] + components[ANGLE_CONSISTENCY]) * state.rotflp_gate
    return total
