"""Failure injection: edits action sequences around a grasp keyframe.

Injectors only touch the action channel; states/tracks/joints of the input
rollout are left alone and must be regenerated by re-simulation. Every
injector records its exact parameters in a PerturbationSpec so the paired
fix label can be generated deterministically, and so that re-applying the
spec to the original rollout reproduces the perturbed actions bit-exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import Action, FailureType, Rollout
from .errors import ValidationError

log = logging.getLogger(__name__)

GRIPPER_THRESHOLD = 0.5


@dataclass(frozen=True)
class PerturbationSpec:
    """Exact injected parameters for one synthesized failure.

    keyframe is the action index at which the scripted closure begins (one
    before the state-side crossing index). Only the fields relevant to
    failure_type are set; the rest stay None.
    """

    failure_type: FailureType
    keyframe: int
    window: int = 5
    delay_steps: Optional[int] = None
    strength_scale: Optional[float] = None
    invert: bool = False
    offset_x: Optional[float] = None
    offset_y: Optional[float] = None
    sigma: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError("window must be >= 1")
        ft = FailureType(self.failure_type)
        object.__setattr__(self, "failure_type", ft)
        required = {
            FailureType.delay_close: ("delay_steps",),
            FailureType.weak_close: ("strength_scale",),
            FailureType.force_open: (),
            FailureType.translation: ("offset_x", "offset_y", "sigma", "seed"),
        }[ft]
        for name in required:
            if getattr(self, name) is None:
                raise ValidationError(f"{ft.value} spec missing {name}")

    def to_dict(self) -> dict:
        return {
            "failure_type": self.failure_type.value,
            "keyframe": self.keyframe,
            "window": self.window,
            "delay_steps": self.delay_steps,
            "strength_scale": self.strength_scale,
            "invert": self.invert,
            "offset_x": self.offset_x,
            "offset_y": self.offset_y,
            "sigma": self.sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        return cls(
            failure_type=FailureType(d["failure_type"]),
            keyframe=int(d["keyframe"]),
            window=int(d.get("window", 5)),
            delay_steps=d.get("delay_steps"),
            strength_scale=d.get("strength_scale"),
            invert=bool(d.get("invert", False)),
            offset_x=d.get("offset_x"),
            offset_y=d.get("offset_y"),
            sigma=d.get("sigma"),
            seed=d.get("seed"),
        )


def _gripper_cmds(actions: Sequence[Action]) -> list[float]:
    return [a.gripper_cmd for a in actions]


def _with_gripper(actions: Sequence[Action], cmds: Sequence[float]) -> tuple[Action, ...]:
    return tuple(replace(a, gripper_cmd=float(c)) for a, c in zip(actions, cmds))


def _require_closing_keyframe(actions: Sequence[Action], keyframe: int) -> None:
    n = len(actions)
    if not 0 <= keyframe < n:
        raise ValidationError(f"keyframe {keyframe} outside action range [0, {n})")
    pre = actions[keyframe - 1].gripper_cmd if keyframe > 0 else 1.0
    if not (actions[keyframe].gripper_cmd < GRIPPER_THRESHOLD <= pre):
        raise ValidationError(f"keyframe {keyframe} is not a closing transition")


def apply_perturbation(actions: Sequence[Action], spec: PerturbationSpec) -> tuple[Action, ...]:
    """Re-apply a recorded spec to an action sequence (pure, deterministic)."""
    actions = tuple(actions)
    n = len(actions)
    k, w = spec.keyframe, spec.window
    ft = spec.failure_type

    if ft is FailureType.delay_close:
        d = spec.delay_steps
        if d < 0:
            raise ValidationError("delay_steps must be >= 0")
        if k + d >= n:
            raise ValidationError(
                f"delay {d} pushes closure past horizon {n}; extend or reject")
        cmds = _gripper_cmds(actions)
        pre = cmds[k - 1] if k > 0 else 1.0
        out = list(cmds)
        out[k:k + d] = [pre] * d
        out[k + d:] = cmds[k:n - d]
        return _with_gripper(actions, out)

    if ft is FailureType.weak_close:
        s = spec.strength_scale
        if not 0.0 < s <= 1.0:
            raise ValidationError(f"strength_scale {s} outside (0, 1]")
        cmds = _gripper_cmds(actions)
        out = [c if i < k else 1.0 - s * (1.0 - c) for i, c in enumerate(cmds)]
        return _with_gripper(actions, out)

    if ft is FailureType.force_open:
        cmds = _gripper_cmds(actions)
        out = list(cmds)
        # Invert the closing commands inside the window; already-open steps
        # stay open so the failed rollout contains no closing transition.
        for i in range(max(0, k - w), min(n, k + w + 1)):
            if out[i] < GRIPPER_THRESHOLD:
                out[i] = 1.0 - out[i]
        # No late accidental grasp: clamp any closing command after the
        # window to fully open.
        for i in range(k + w + 1, n):
            if out[i] < GRIPPER_THRESHOLD:
                out[i] = 1.0
        return _with_gripper(actions, out)

    if ft is FailureType.translation:
        lo = max(0, k - w)
        count = k - lo + 1
        ddx = spec.offset_x / count
        ddy = spec.offset_y / count
        out = list(actions)
        for i in range(lo, k + 1):
            out[i] = replace(out[i], dx=out[i].dx + ddx, dy=out[i].dy + ddy)
        return tuple(out)

    raise ValidationError(f"unknown failure type {ft!r}")


def inject_delay_close(rollout: Rollout, keyframe: int, delay_steps: int,
                       window: int = 5) -> tuple[tuple[Action, ...], PerturbationSpec]:
    """Hold the gripper open for delay_steps and shift closure later."""
    _require_closing_keyframe(rollout.actions, keyframe)
    spec = PerturbationSpec(FailureType.delay_close, keyframe, window=window,
                            delay_steps=int(delay_steps))
    return apply_perturbation(rollout.actions, spec), spec


def inject_weak_close(rollout: Rollout, keyframe: int, strength_scale: float,
                      window: int = 5) -> tuple[tuple[Action, ...], PerturbationSpec]:
    """Scale closing depth down: cmd' = 1 - scale * (1 - cmd) from keyframe on."""
    _require_closing_keyframe(rollout.actions, keyframe)
    if not 0.0 < strength_scale <= 1.0:
        raise ValidationError(f"strength_scale {strength_scale} outside (0, 1]")
    spec = PerturbationSpec(FailureType.weak_close, keyframe, window=window,
                            strength_scale=float(strength_scale))
    return apply_perturbation(rollout.actions, spec), spec


def inject_force_open(rollout: Rollout, keyframe: int,
                      window: int = 5) -> tuple[tuple[Action, ...], PerturbationSpec]:
    """Invert the gripper command in a window around the keyframe."""
    _require_closing_keyframe(rollout.actions, keyframe)
    spec = PerturbationSpec(FailureType.force_open, keyframe, window=window,
                            invert=True)
    return apply_perturbation(rollout.actions, spec), spec


def draw_translation_offset(sigma: float, seed: int, min_offset: float,
                            max_offset: float) -> tuple[float, float, int]:
    """Draw (offset_x, offset_y) ~ N(0, sigma^2), resampling to the floor.

    Resamples until min_offset <= max(|ox|, |oy|) <= max_offset so the
    injected failure is guaranteed (and stays recoverable). Returns the
    realized offsets plus the number of draws taken.
    """
    if sigma <= 0:
        raise ValidationError("sigma must be > 0 to realize a translation failure")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(3,)))
    draws = 0
    while True:
        ox, oy = rng.normal(0.0, sigma, size=2)
        draws += 1
        if min_offset <= max(abs(ox), abs(oy)) <= max_offset:
            if draws > 1:
                log.info("translation offset resampled %d times", draws - 1)
            return float(ox), float(oy), draws
        if draws > 10_000:
            raise ValidationError("translation offset resampling did not converge")


def inject_translation(rollout: Rollout, keyframe: int, window: int, sigma: float,
                       seed: int, min_offset: float, max_offset: float = 0.05,
                       offsets: Optional[tuple[float, float]] = None,
                       ) -> tuple[tuple[Action, ...], PerturbationSpec]:
    """Ramp a per-rollout x-y offset into the approach before the keyframe.

    The offset is a single draw held after the keyframe, which keeps the
    paired correction expressible as an axis-aligned step count.
    """
    _require_closing_keyframe(rollout.actions, keyframe)
    if offsets is None:
        ox, oy, _ = draw_translation_offset(sigma, seed, min_offset, max_offset)
    else:
        ox, oy = offsets
    spec = PerturbationSpec(FailureType.translation, keyframe, window=window,
                            offset_x=ox, offset_y=oy, sigma=float(sigma),
                            seed=int(seed))
    return apply_perturbation(rollout.actions, spec), spec
