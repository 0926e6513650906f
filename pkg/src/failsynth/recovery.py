"""Closed-loop correction: trigger rule, clip extraction, the deterministic
label -> control-primitive mapping, trajectory editing, and replay scoring."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

from .core import Action, FailureType, Rollout, crossings
from .errors import SchemaError, ValidationError
from .labels import FixLabel
from .world import SceneSpec, resimulate


@dataclass(frozen=True)
class TriggerPolicy:
    """Event-aligned analyzer invocation with a fixed action budget."""

    action_budget: int = 80
    clip_length: int = 40
    downsample_stride: int = 2

    def __post_init__(self):
        if min(self.action_budget, self.clip_length, self.downsample_stride) <= 0:
            raise ValidationError("trigger policy fields must be positive")
        if self.clip_length > self.action_budget:
            raise ValidationError("clip_length must not exceed action_budget")


@dataclass(frozen=True)
class TranslateDelta:
    dx: float
    dy: float
    at: int


@dataclass(frozen=True)
class GripperClose:
    at: int
    strength: float


@dataclass(frozen=True)
class Reclose:
    at: int
    strength: float


ControlPrimitive = Union[TranslateDelta, GripperClose, Reclose]

RECLOSE_DELAY = 3
RECLOSE_STRENGTH_BUMP = 0.2


def should_invoke(rollout_so_far: Rollout, policy: TriggerPolicy,
                  threshold: float = 0.5) -> str:
    """One of invoke_at_keyframe, invoke_at_budget, continue."""
    g = rollout_so_far.gripper_channel()
    closing = [t for t in crossings(g, threshold) if g[t] < threshold]
    if closing:
        return "invoke_at_keyframe"
    if rollout_so_far.horizon >= policy.action_budget:
        return "invoke_at_budget"
    return "continue"


def extract_clip(rollout: Rollout, policy: TriggerPolicy) -> list[int]:
    """Frame indices of the strided fixed-length suffix clip."""
    n = rollout.horizon + 1
    start = max(0, n - policy.clip_length)
    return list(range(start, n, policy.downsample_stride))


def map_to_primitives(label: FixLabel, bin_size: float,
                      keyframe: Optional[int] = None) -> list[ControlPrimitive]:
    """Deterministic conversion from structured fields to control primitives.

    keyframe anchors a translation fix (translation labels carry no temporal
    field of their own).
    """
    if label.result != "FAIL":
        raise SchemaError("only FAIL labels map to corrections")
    if label.is_translation():
        if label.fix_n_x == 0 and label.fix_n_y == 0:
            raise SchemaError("no-op translation correction (both step counts zero)")
        if keyframe is None:
            raise ValidationError("translation correction needs the keyframe anchor")
        sx = 1.0 if label.fix_dir_x == "+x" else -1.0
        sy = 1.0 if label.fix_dir_y == "+y" else -1.0
        return [TranslateDelta(dx=sx * label.fix_n_x * bin_size,
                               dy=sy * label.fix_n_y * bin_size, at=keyframe)]
    prims: list[ControlPrimitive] = [GripperClose(at=label.close_at,
                                                  strength=label.strength)]
    if label.failure_type is FailureType.weak_close:
        prims.append(Reclose(at=label.close_at + RECLOSE_DELAY,
                             strength=min(1.0, label.strength + RECLOSE_STRENGTH_BUMP)))
    return prims


def apply_primitives(actions: Sequence[Action], primitives: Sequence[ControlPrimitive],
                     ramp_window: int = 5) -> tuple[Action, ...]:
    """Edit an action sequence per the predicted primitives.

    Translation deltas are distributed over the same ramp window the injector
    uses, which keeps recovered rollouts within the kinematic envelope.
    Gripper commands are overwritten (clamped closed) from the anchor on.
    """
    out = list(actions)
    n = len(out)
    for prim in primitives:
        if not 0 <= prim.at < n:
            raise ValidationError(f"primitive anchor {prim.at} outside horizon {n}")
        if isinstance(prim, TranslateDelta):
            lo = max(0, prim.at - ramp_window)
            count = prim.at - lo + 1
            for i in range(lo, prim.at + 1):
                out[i] = replace(out[i], dx=out[i].dx + prim.dx / count,
                                 dy=out[i].dy + prim.dy / count)
        else:  # GripperClose / Reclose
            closed = 1.0 - prim.strength
            for i in range(prim.at, n):
                if out[i].gripper_cmd > closed:
                    out[i] = replace(out[i], gripper_cmd=closed)
    return tuple(out)


def replay_with_recovery(scene: SceneSpec, failed_actions: Sequence[Action],
                         primitives: Sequence[ControlPrimitive],
                         ramp_window: int = 5,
                         rollout_id: str = "recovered") -> tuple[Rollout, bool]:
    """Replay the edited trajectory and report the surrogate success bit."""
    edited = apply_primitives(failed_actions, primitives, ramp_window=ramp_window)
    ro = resimulate(scene, edited, rollout_id=rollout_id)
    return ro, ro.outcome == "success"


def recovery_rate(cases: Sequence[tuple[SceneSpec, Sequence[Action],
                                        Sequence[ControlPrimitive]]],
                  ramp_window: int = 5) -> tuple[float, int]:
    """Fraction of failure cases recovered by their predicted corrections."""
    if not cases:
        raise ValidationError("recovery rate over an empty case set")
    wins = 0
    for scene, failed_actions, primitives in cases:
        _, ok = replay_with_recovery(scene, failed_actions, primitives,
                                     ramp_window=ramp_window)
        wins += ok
    return wins / len(cases), len(cases)
