"""Desk-scale surrogate world model.

Stands in for the action-conditioned generative rollout source: scripts
successful pick-and-place demonstrations, re-simulates arbitrary action
sequences with a kinematic attach/detach grasp rule, synthesizes point
tracks and joint traces, and injects controlled artifacts so verifier
rejection paths are testable.

Dynamics are purely kinematic (no forces); the verifiers downstream consume
kinematic signals only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import Action, EndEffectorState, JointTrace, Rollout, TrackSet, wrap_angle
from .errors import CameraError, SceneError, ValidationError

WORKSPACE_LO = np.array([0.15, -0.35, 0.0])
WORKSPACE_HI = np.array([0.75, 0.35, 0.6])
TABLE_Z = 0.02

# Published Franka 7-DOF joint ranges (radians); overridable via config.
FRANKA_Q_MIN = np.array([-2.8973, -1.7628, -2.8973, -3.0718, -2.8973, -0.0175, -2.8973])
FRANKA_Q_MAX = np.array([2.8973, 1.7628, 2.8973, -0.0698, 2.8973, 3.7525, 2.8973])

# Surrogate joint map, version 1: q = mid + G @ (pose - ref) + amp * sin(C @ pose).
# Gains are sized so every nominal demo sits well inside the limits; the
# calibration stage depends on this map staying fixed.
JOINT_MAP_VERSION = 1
_JOINT_REF_POSE = np.array([0.45, 0.0, 0.15, math.pi - 0.3, 0.0, 0.0])
_JOINT_GAINS = np.array([
    [1.2, 0.8, 0.0, 0.0, 0.0, 0.3],
    [0.9, -1.1, 0.7, 0.0, 0.0, 0.0],
    [-0.6, 1.0, 0.5, 0.0, 0.0, 0.2],
    [0.8, 0.4, -1.3, 0.0, 0.0, 0.0],
    [0.5, -0.7, 0.9, 0.2, 0.0, 0.0],
    [-1.0, 0.6, 0.8, 0.0, 0.2, 0.0],
    [0.7, 1.1, -0.4, 0.0, 0.0, 0.5],
])
_JOINT_COUPLING = np.array([
    [3.0, 2.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 3.0, 2.0, 0.0, 0.0, 0.0],
    [2.0, 0.0, 3.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 2.0, 1.0, 0.0, 0.0, 0.0],
    [2.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 2.0, 0.0, 0.0, 0.0],
])
_JOINT_SIN_AMP = 0.03

GRID_W = 10
GRID_H = 10
_GRID_X = np.linspace(0.2, 0.6, GRID_W)
_GRID_Y = np.linspace(-0.25, 0.25, GRID_H)


@dataclass(frozen=True)
class CameraSpec:
    """Static overhead pinhole camera looking straight down at the desk."""

    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0
    position: tuple = (0.45, 0.0, 0.95)

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project (N, 3) world points to (N, 2) pixels."""
        p = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.position)
        # cam axes: x -> world x, y -> -world y, z -> -world z (looking down)
        x, y, z = p[:, 0], -p[:, 1], -p[:, 2]
        if np.any(z <= 1e-6):
            raise CameraError("point at or behind the camera plane")
        u = self.fx * x / z + self.cx
        v = self.fy * y / z + self.cy
        return np.stack([u, v], axis=1)

    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "position": list(self.position)}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraSpec":
        return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                   position=tuple(d["position"]))


@dataclass(frozen=True)
class SceneSpec:
    """Scene geometry, grasp parameters, camera, and the rollout seed."""

    object_pos: tuple
    goal_pos: tuple
    grasp_tolerance: float = 0.01
    attach_strength: float = 0.7
    partial_floor: float = 0.2
    slip_delay: int = 3
    camera: CameraSpec = field(default_factory=CameraSpec)
    seed: int = 0

    def __post_init__(self):
        if self.grasp_tolerance <= 0:
            raise SceneError("grasp_tolerance must be > 0")
        if not 0.0 < self.attach_strength <= 1.0:
            raise SceneError("attach_strength must lie in (0, 1]")
        if not 0.0 <= self.partial_floor < self.attach_strength:
            raise SceneError("partial_floor must lie in [0, attach_strength)")
        for name in ("object_pos", "goal_pos"):
            p = np.asarray(getattr(self, name), dtype=float)
            if p.shape != (3,):
                raise SceneError(f"{name} must be a 3-vector")
            if np.any(p < WORKSPACE_LO) or np.any(p > WORKSPACE_HI):
                raise SceneError(f"{name} {p.tolist()} outside the reachable workspace")
            object.__setattr__(self, name, tuple(float(v) for v in p))

    def start_state(self) -> EndEffectorState:
        """Deterministic start pose derived from the scene seed."""
        rng = np.random.default_rng(np.random.SeedSequence(entropy=int(self.seed),
                                                           spawn_key=(0,)))
        x = 0.35 + rng.uniform(-0.03, 0.03)
        y = 0.0 + rng.uniform(-0.05, 0.05)
        z = 0.28 + rng.uniform(-0.02, 0.02)
        roll = math.pi - 0.3 + rng.uniform(-0.05, 0.05)
        yaw = rng.uniform(-0.2, 0.2)
        return EndEffectorState(x, y, z, roll, 0.0, yaw, 1.0)

    def to_dict(self) -> dict:
        return {
            "object_pos": list(self.object_pos),
            "goal_pos": list(self.goal_pos),
            "grasp_tolerance": self.grasp_tolerance,
            "attach_strength": self.attach_strength,
            "partial_floor": self.partial_floor,
            "slip_delay": self.slip_delay,
            "camera": self.camera.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            object_pos=tuple(d["object_pos"]),
            goal_pos=tuple(d["goal_pos"]),
            grasp_tolerance=d["grasp_tolerance"],
            attach_strength=d["attach_strength"],
            partial_floor=d.get("partial_floor", 0.2),
            slip_delay=d.get("slip_delay", 3),
            camera=CameraSpec.from_dict(d["camera"]) if "camera" in d else CameraSpec(),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class ArtifactSpec:
    """Controlled observation corruptions; all zero means a clean rollout."""

    jitter_px: float = 0.0
    flicker_rate: float = 0.0
    topo_warp: float = 0.0
    affine_jitter: float = 0.0
    joint_spike: float = 0.0

    def __post_init__(self):
        for name in ("jitter_px", "flicker_rate", "topo_warp", "affine_jitter",
                     "joint_spike"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.flicker_rate > 1.0:
            raise ValidationError("flicker_rate must lie in [0, 1]")

    def is_clean(self) -> bool:
        return (self.jitter_px == 0 and self.flicker_rate == 0 and self.topo_warp == 0
                and self.affine_jitter == 0 and self.joint_spike == 0)

    def to_dict(self) -> dict:
        return {"jitter_px": self.jitter_px, "flicker_rate": self.flicker_rate,
                "topo_warp": self.topo_warp, "affine_jitter": self.affine_jitter,
                "joint_spike": self.joint_spike}

    @classmethod
    def from_dict(cls, d: dict) -> "ArtifactSpec":
        return cls(**d)


class _SimResult:
    __slots__ = ("states", "object_traj", "outcome")

    def __init__(self, states, object_traj, outcome):
        self.states = states
        self.object_traj = object_traj
        self.outcome = outcome


def _simulate(scene: SceneSpec, actions: Sequence[Action]) -> _SimResult:
    """Integrate actions kinematically with the attach/slip grasp rule."""
    if len(actions) == 0:
        raise ValidationError("empty action sequence")
    s0 = scene.start_state()
    pose = s0.pose()
    states = [s0]
    obj = np.asarray(scene.object_pos, dtype=float)
    obj_traj = [obj.copy()]
    attached = None  # None | "partial" | "full"
    slip_left = 0
    for a in actions:
        pose = pose + a.deltas()
        depth = 1.0 - a.gripper_cmd
        ee = pose[:3]
        if attached is None:
            if depth >= scene.partial_floor and np.linalg.norm(ee - obj) <= scene.grasp_tolerance:
                attached = "full" if depth >= scene.attach_strength else "partial"
                slip_left = scene.slip_delay
        else:
            if depth < scene.partial_floor:
                attached = None  # released; object stays where it is
            elif depth >= scene.attach_strength:
                attached = "full"
            else:
                if attached == "full":
                    attached = "partial"
                    slip_left = scene.slip_delay
                else:
                    slip_left -= 1
                    if slip_left <= 0:
                        attached = None  # slipped out of the weak grasp
        if attached is not None:
            obj = ee.copy()
        states.append(EndEffectorState(pose[0], pose[1], pose[2], pose[3], pose[4],
                                       pose[5], a.gripper_cmd))
        obj_traj.append(obj.copy())
    goal = np.asarray(scene.goal_pos, dtype=float)
    ok = np.linalg.norm(obj_traj[-1] - goal) <= scene.grasp_tolerance
    return _SimResult(tuple(states), np.stack(obj_traj), "success" if ok else "fail")


def resimulate(scene: SceneSpec, actions: Sequence[Action], rollout_id: str = "",
               task: str = "pick-and-place") -> Rollout:
    """Integrate an arbitrary action sequence from the scene's start state.

    Never fails on the action content: failed grasps are legitimate outputs,
    reported through the outcome field.
    """
    sim = _simulate(scene, actions)
    return Rollout(id=rollout_id, task=task, states=sim.states, actions=tuple(actions),
                   outcome=sim.outcome, meta={"scene": scene.to_dict()})


def _smooth_profile(n: int) -> np.ndarray:
    """Cosine ease-in/out position fractions, length n+1, from 0 to 1."""
    u = np.linspace(0.0, 1.0, n + 1)
    return (1.0 - np.cos(np.pi * u)) / 2.0


def _trapezoid_profile(n: int, ramp: int = 3) -> np.ndarray:
    """Trapezoidal-speed position fractions, length n+1, from 0 to 1.

    Reaches cruise speed within `ramp` steps so that even a small closure
    delay puts the gripper measurably past the grasp point.
    """
    v = np.array([min(1.0, (i + 1) / ramp, (n - i) / ramp) for i in range(n)])
    pos = np.concatenate([[0.0], np.cumsum(v)])
    return pos / pos[-1]


def script_success(scene: SceneSpec, horizon: int = 60, rollout_id: str = "",
                   task: str = "pick-and-place") -> Rollout:
    """Script a successful approach -> grasp -> transport -> place rollout.

    The gripper crosses 0.5 exactly once (downward); outcome is success by
    construction. Deterministic given the scene seed.
    """
    if horizon < 20:
        raise ValidationError("horizon must be >= 20")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(scene.seed),
                                                       spawn_key=(1,)))
    s0 = scene.start_state()
    p0 = np.array([s0.x, s0.y, s0.z])
    obj = np.asarray(scene.object_pos, dtype=float)
    goal = np.asarray(scene.goal_pos, dtype=float)

    n_app = max(6, int(round(0.35 * horizon)))
    dwell = 2
    k_close = n_app + dwell  # action index of the closing command
    n_tr = max(6, int(round(0.35 * horizon)))

    pos = np.empty((horizon + 1, 3))
    prof = _smooth_profile(n_app)[:, None]
    pos[: n_app + 1] = p0 + prof * (obj - p0)
    pos[n_app: k_close + 2] = obj  # dwell + closure, gripper station-keeping
    prof = _trapezoid_profile(n_tr)[:, None]
    pos[k_close + 1: k_close + 2 + n_tr] = obj + prof * (goal - obj)
    pos[k_close + 1 + n_tr:] = goal

    yaw_amp = rng.uniform(0.0, 0.05)
    yaw = s0.yaw + yaw_amp * np.sin(np.pi * np.arange(horizon + 1) / horizon)

    cmds = np.ones(horizon)
    cmds[k_close:] = 0.0

    actions = []
    for t in range(horizon):
        d = pos[t + 1] - pos[t]
        actions.append(Action(d[0], d[1], d[2], 0.0, 0.0,
                              float(wrap_angle(yaw[t + 1] - yaw[t])), float(cmds[t])))
    ro = resimulate(scene, actions, rollout_id=rollout_id, task=task)
    if ro.outcome != "success":
        raise SceneError("scripted demonstration did not reach the goal; "
                         "scene geometry is unreachable")
    return ro


def joint_surrogate(poses: np.ndarray) -> np.ndarray:
    """Smooth deterministic map from end-effector poses (N, 6) to 7 joints."""
    rel = np.asarray(poses, dtype=float) - _JOINT_REF_POSE
    mid = (FRANKA_Q_MIN + FRANKA_Q_MAX) / 2.0
    q = mid + rel @ _JOINT_GAINS.T + _JOINT_SIN_AMP * np.sin(np.asarray(poses) @ _JOINT_COUPLING.T)
    return q


def synthesize_observations(rollout: Rollout, scene: SceneSpec,
                            artifacts: ArtifactSpec = ArtifactSpec(),
                            seed: int = 0) -> Rollout:
    """Populate tracks and joints for a rollout produced by this world.

    Tracks are the pinhole projection of a static 10x10 desk-plane grid with
    the object and gripper keypoints substituted into their nearest cells.
    Artifacts are applied afterwards under the given seed.
    """
    cam = scene.camera
    n = len(rollout.states)
    T = n - 1
    sim = _simulate(scene, rollout.actions)

    gx, gy = np.meshgrid(_GRID_X, _GRID_Y, indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel(), np.full(GRID_W * GRID_H, TABLE_Z)], axis=1)
    base_px = cam.project(grid)

    ee_pos = np.stack([s.pose()[:3] for s in rollout.states])
    ee_px = cam.project(ee_pos)
    obj_px = cam.project(sim.object_traj)

    points = np.repeat(base_px[:, None, :], n, axis=1)
    cell_obj = int(np.argmin(np.linalg.norm(base_px - obj_px[0], axis=1)))
    d_ee = np.linalg.norm(base_px - ee_px[0], axis=1)
    d_ee[cell_obj] = np.inf
    cell_ee = int(np.argmin(d_ee))
    points[cell_obj] = obj_px
    points[cell_ee] = ee_px
    masks = np.ones((points.shape[0], n), dtype=bool)

    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(2,)))
    c = cam.center()
    if artifacts.topo_warp > 0:
        scale = 1.0 + artifacts.topo_warp * (np.arange(n) / max(T, 1))
        points = c + scale[None, :, None] * (points - c)
    if artifacts.affine_jitter > 0:
        for t in range(1, n):
            ang = 0.05 * artifacts.affine_jitter * rng.standard_normal()
            sc = 1.0 + 0.05 * artifacts.affine_jitter * rng.standard_normal()
            rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
            points[:, t] = c + sc * (points[:, t] - c) @ rot.T
    if artifacts.jitter_px > 0:
        points = points + rng.normal(0.0, artifacts.jitter_px, size=points.shape)
    if artifacts.flicker_rate > 0:
        toggles = rng.random((points.shape[0], T)) < artifacts.flicker_rate
        parity = np.cumsum(toggles, axis=1) % 2
        masks[:, 1:] = parity == 0

    q = joint_surrogate(np.stack([s.pose() for s in rollout.states]))
    if artifacts.joint_spike > 0:
        q[n // 2, 0] += artifacts.joint_spike

    meta = dict(rollout.meta)
    meta["artifacts"] = artifacts.to_dict()
    meta["obs_seed"] = int(seed)
    meta["keypoint_cells"] = [cell_obj, cell_ee]
    return replace(rollout, tracks=TrackSet(points, masks), joints=JointTrace(q),
                   meta=meta)
