"""Verifier suite: dynamics consistency, kinematic safety, semantic checks,
point-track coherence, calibration, and the all-pass retention gate."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Rollout, JointTrace, state_diff
from .errors import InsufficientTrackingError, ValidationError
from .tracks import PointTrackScores, TrackScoreConfig, quantile_sorted, score_tracks
from .world import FRANKA_Q_MAX, FRANKA_Q_MIN

CALIBRATION_FORMAT_VERSION = 1

# Radian components are scaled before the mixed-unit error norm.
DEFAULT_RADIAN_WEIGHT = 0.1


# ---------------------------------------------------------------------------
# state-difference predictors (pluggable; the trained visual IDM is out of scope)

class OraclePredictor:
    """Returns the true end-effector state difference."""

    def __call__(self, rollout: Rollout, t: int, d: int) -> np.ndarray:
        return state_diff(rollout, t, d)


class NoisyPredictor:
    """Oracle plus deterministic per-sample Gaussian noise and optional bias.

    Noise is seeded from (seed, rollout id, t, d) so verification order and
    parallelism cannot change the result.
    """

    def __init__(self, sigma_xyz: float = 0.0, sigma_rpy: float = 0.0,
                 bias: Optional[Sequence[float]] = None, seed: int = 0):
        self.sigma_xyz = sigma_xyz
        self.sigma_rpy = sigma_rpy
        self.bias = np.zeros(6) if bias is None else np.asarray(bias, dtype=float)
        self.seed = seed

    def __call__(self, rollout: Rollout, t: int, d: int) -> np.ndarray:
        key = zlib.crc32(f"{rollout.id}:{t}:{d}".encode())
        rng = np.random.default_rng(np.random.SeedSequence(entropy=self.seed,
                                                           spawn_key=(4, key)))
        noise = np.concatenate([rng.normal(0.0, self.sigma_xyz, 3),
                                rng.normal(0.0, self.sigma_rpy, 3)])
        return state_diff(rollout, t, d) + self.bias + noise


def predictor_from_spec(spec: str, seed: int = 0):
    """"oracle" or "noisy:<sigma_xyz>,<sigma_rpy>"."""
    if spec == "oracle":
        return OraclePredictor()
    if spec.startswith("noisy:"):
        sx, sr = (float(v) for v in spec[6:].split(","))
        return NoisyPredictor(sigma_xyz=sx, sigma_rpy=sr, seed=seed)
    raise ValueError(f"unknown predictor spec {spec!r}")


# ---------------------------------------------------------------------------
# IDM verifier

@dataclass(frozen=True)
class IdmCalibration:
    """Dynamics-consistency threshold calibrated on success demonstrations.

    tau_raw is the plain pooled percentile; tau adds the configured safety
    margin and epsilon floor actually used by the gate.
    """

    tau: float
    tau_raw: float
    d: int
    percentile: float
    mae_xyz: float
    mae_rpy: float
    margin: float
    radian_weight: float = DEFAULT_RADIAN_WEIGHT

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError("idm tau must be > 0")

    def to_dict(self) -> dict:
        return {"tau": self.tau, "tau_raw": self.tau_raw, "d": self.d,
                "percentile": self.percentile, "mae_xyz": self.mae_xyz,
                "mae_rpy": self.mae_rpy, "margin": self.margin,
                "radian_weight": self.radian_weight}

    @classmethod
    def from_dict(cls, d: dict) -> "IdmCalibration":
        return cls(**d)


@dataclass(frozen=True)
class IdmResult:
    errors: np.ndarray
    q: float
    mae_xyz: float
    mae_rpy: float
    passed: bool


def _idm_errors(rollout: Rollout, predictor: Callable, d: int,
                radian_weight: float) -> tuple[np.ndarray, np.ndarray]:
    T = rollout.horizon
    if d < 1 or d > T:
        raise ValidationError(f"interval d={d} out of range for horizon {T}")
    w = np.array([1.0, 1.0, 1.0, radian_weight, radian_weight, radian_weight])
    diffs = []
    for t in range(0, T - d + 1):
        diffs.append(predictor(rollout, t, d) - state_diff(rollout, t, d))
    diffs = np.stack(diffs)
    errs = np.linalg.norm(diffs * w, axis=1)
    return errs, diffs


def verify_idm(rollout: Rollout, predictor: Callable,
               calib: IdmCalibration) -> IdmResult:
    """Check visually-implied state differences against the conditioning states."""
    errs, diffs = _idm_errors(rollout, predictor, calib.d, calib.radian_weight)
    q = quantile_sorted(errs, calib.percentile)
    return IdmResult(errors=errs, q=q,
                     mae_xyz=float(np.mean(np.abs(diffs[:, :3]))),
                     mae_rpy=float(np.mean(np.abs(diffs[:, 3:]))),
                     passed=bool(q <= calib.tau))


def calibrate_idm(success_rollouts: Sequence[Rollout], predictor: Callable,
                  percentile: float = 0.95, d: int = 4, eps: float = 1e-6,
                  margin: float = 2.0,
                  radian_weight: float = DEFAULT_RADIAN_WEIGHT) -> IdmCalibration:
    """Pool per-sample errors over success demos and set the gate threshold."""
    if not success_rollouts:
        raise ValidationError("cannot calibrate on an empty demo set")
    pooled, all_diffs = [], []
    for ro in success_rollouts:
        errs, diffs = _idm_errors(ro, predictor, d, radian_weight)
        pooled.append(errs)
        all_diffs.append(diffs)
    pooled = np.concatenate(pooled)
    diffs = np.concatenate(all_diffs)
    tau_raw = quantile_sorted(pooled, percentile)
    return IdmCalibration(tau=margin * tau_raw + eps, tau_raw=tau_raw, d=d,
                          percentile=percentile,
                          mae_xyz=float(np.mean(np.abs(diffs[:, :3]))),
                          mae_rpy=float(np.mean(np.abs(diffs[:, 3:]))),
                          margin=margin, radian_weight=radian_weight)


# ---------------------------------------------------------------------------
# joint pose verifier

@dataclass(frozen=True)
class JointCalibration:
    """Joint limits plus p95-calibrated velocity/acceleration thresholds."""

    q_min: np.ndarray
    q_max: np.ndarray
    tau_v: float
    tau_a: float
    p95_v: float
    p95_a: float
    percentile: float = 0.95
    margin: float = 2.0

    def __post_init__(self):
        q_min = np.asarray(self.q_min, dtype=float)
        q_max = np.asarray(self.q_max, dtype=float)
        if np.any(q_min >= q_max):
            raise ValidationError("q_min must be < q_max per joint")
        if self.tau_v <= 0 or self.tau_a <= 0:
            raise ValidationError("tau_v and tau_a must be > 0")
        object.__setattr__(self, "q_min", q_min)
        object.__setattr__(self, "q_max", q_max)

    def to_dict(self) -> dict:
        return {"q_min": self.q_min.tolist(), "q_max": self.q_max.tolist(),
                "tau_v": self.tau_v, "tau_a": self.tau_a, "p95_v": self.p95_v,
                "p95_a": self.p95_a, "percentile": self.percentile,
                "margin": self.margin}

    @classmethod
    def from_dict(cls, d: dict) -> "JointCalibration":
        return cls(q_min=np.array(d["q_min"]), q_max=np.array(d["q_max"]),
                   tau_v=d["tau_v"], tau_a=d["tau_a"], p95_v=d["p95_v"],
                   p95_a=d["p95_a"], percentile=d.get("percentile", 0.95),
                   margin=d.get("margin", 2.0))


def joint_derivatives(trace: JointTrace) -> tuple[np.ndarray, np.ndarray]:
    """Central finite differences, one-sided at the boundaries."""
    q = trace.q
    n = q.shape[0]
    if n < 3:
        raise ValidationError("need at least 3 frames for joint derivatives")
    qd = np.empty_like(q)
    qd[1:-1] = (q[2:] - q[:-2]) / 2.0
    qd[0] = q[1] - q[0]
    qd[-1] = q[-1] - q[-2]
    qdd = np.empty_like(q)
    qdd[1:-1] = q[2:] - 2.0 * q[1:-1] + q[:-2]
    qdd[0] = qdd[1]
    qdd[-1] = qdd[-2]
    return qd, qdd


def verify_joints(trace: JointTrace,
                  calib: JointCalibration) -> tuple[list[tuple[int, int, str]], bool]:
    """List every (t, j, kind) violation of limits or motion thresholds."""
    q = trace.q
    qd, qdd = joint_derivatives(trace)
    violations = []
    for t, j in zip(*np.nonzero((q < calib.q_min) | (q > calib.q_max))):
        violations.append((int(t), int(j), "limit"))
    for t, j in zip(*np.nonzero(np.abs(qd) > calib.tau_v)):
        violations.append((int(t), int(j), "velocity"))
    for t, j in zip(*np.nonzero(np.abs(qdd) > calib.tau_a)):
        violations.append((int(t), int(j), "acceleration"))
    return violations, not violations


def joint_exceedance(trace: JointTrace, calib: JointCalibration) -> tuple[bool, bool]:
    """Whether any sample exceeds the raw (un-margined) p95 thresholds."""
    qd, qdd = joint_derivatives(trace)
    return bool(np.any(np.abs(qd) > calib.p95_v)), bool(np.any(np.abs(qdd) > calib.p95_a))


def calibrate_joints(success_rollouts: Sequence[Rollout], percentile: float = 0.95,
                     q_min: np.ndarray = FRANKA_Q_MIN, q_max: np.ndarray = FRANKA_Q_MAX,
                     margin: float = 2.0) -> JointCalibration:
    """Set tau_v/tau_a from pooled |qdot| and |qddot| over success demos."""
    if not success_rollouts:
        raise ValidationError("cannot calibrate on an empty demo set")
    vels, accs = [], []
    for ro in success_rollouts:
        if ro.joints is None:
            raise ValidationError(f"rollout {ro.id} has no joint trace")
        qd, qdd = joint_derivatives(ro.joints)
        vels.append(np.abs(qd).ravel())
        accs.append(np.abs(qdd).ravel())
    p95_v = quantile_sorted(np.concatenate(vels), percentile)
    p95_a = quantile_sorted(np.concatenate(accs), percentile)
    return JointCalibration(q_min=q_min, q_max=q_max,
                            tau_v=margin * p95_v, tau_a=margin * p95_a,
                            p95_v=p95_v, p95_a=p95_a,
                            percentile=percentile, margin=margin)


# ---------------------------------------------------------------------------
# semantic verifier

def clip_descriptor(rollout: Rollout) -> dict:
    """Wire descriptor for a clip: id plus simulator ground truth for mocks."""
    return {"id": rollout.id, "outcome": rollout.outcome,
            "artifacts": rollout.meta.get("artifacts")}


def verify_semantic(rollout: Rollout, reference: Optional[Rollout],
                    client) -> tuple[bool, bool]:
    """Two judgments: is this a valid failure, and is the clip visually clean.

    Transport errors propagate; the pipeline quarantines the rollout.
    """
    request = {
        "instruction": rollout.task,
        "reference_clip_ref": clip_descriptor(reference) if reference else None,
        "candidate_clip_ref": clip_descriptor(rollout),
    }
    resp = client.judge(request)
    return bool(resp["valid_failure"]), bool(resp["visual_ok"])


# ---------------------------------------------------------------------------
# report and gate

@dataclass(frozen=True)
class VerifierReport:
    rollout_id: str
    semantic_valid_failure: bool
    semantic_visual_ok: bool
    idm_error: float
    idm_pass: bool
    idm_mae_xyz: float
    idm_mae_rpy: float
    joint_pass: bool
    joint_violations: tuple
    track_scores: Optional[PointTrackScores]
    track_pass: bool
    track_confident: bool
    retained: bool

    def to_dict(self) -> dict:
        return {
            "rollout_id": self.rollout_id,
            "semantic_valid_failure": self.semantic_valid_failure,
            "semantic_visual_ok": self.semantic_visual_ok,
            "idm_error": self.idm_error,
            "idm_pass": self.idm_pass,
            "idm_mae_xyz": self.idm_mae_xyz,
            "idm_mae_rpy": self.idm_mae_rpy,
            "joint_pass": self.joint_pass,
            "joint_violations": [list(v) for v in self.joint_violations],
            "track_scores": self.track_scores.to_dict() if self.track_scores else None,
            "track_pass": self.track_pass,
            "track_confident": self.track_confident,
            "retained": self.retained,
        }


def gate(semantic_valid_failure: bool, semantic_visual_ok: bool, idm_pass: bool,
         joint_pass: bool, track_pass: bool) -> bool:
    """Retention: the conjunction of all verifier pass bits."""
    return bool(semantic_valid_failure and semantic_visual_ok and idm_pass
                and joint_pass and track_pass)


def verify_rollout(rollout: Rollout, reference: Optional[Rollout], predictor,
                   idm_calib: IdmCalibration, joint_calib: JointCalibration,
                   client, track_cfg: TrackScoreConfig = TrackScoreConfig(),
                   ) -> VerifierReport:
    """Run all four verifiers on one candidate and combine with the gate.

    TransportError from the semantic client propagates (quarantine path).
    """
    valid_failure, visual_ok = verify_semantic(rollout, reference, client)
    idm = verify_idm(rollout, predictor, idm_calib)
    if rollout.joints is None:
        raise ValidationError(f"rollout {rollout.id} missing joint trace")
    violations, joint_pass = verify_joints(rollout.joints, joint_calib)
    if rollout.tracks is None:
        raise ValidationError(f"rollout {rollout.id} missing tracks")
    try:
        scores = score_tracks(rollout.tracks, track_cfg)
        confident = True
        track_pass = scores.s_pt >= track_cfg.retention_floor
    except InsufficientTrackingError:
        scores = None
        confident = False
        track_pass = False
    retained = gate(valid_failure, visual_ok, idm.passed, joint_pass, track_pass)
    return VerifierReport(
        rollout_id=rollout.id,
        semantic_valid_failure=valid_failure,
        semantic_visual_ok=visual_ok,
        idm_error=idm.q, idm_pass=idm.passed,
        idm_mae_xyz=idm.mae_xyz, idm_mae_rpy=idm.mae_rpy,
        joint_pass=joint_pass, joint_violations=tuple(violations),
        track_scores=scores, track_pass=track_pass, track_confident=confident,
        retained=retained)


def save_calibrations(path, idm: IdmCalibration, joints: JointCalibration,
                      extra: Optional[dict] = None) -> None:
    payload = {"version": CALIBRATION_FORMAT_VERSION, "idm": idm.to_dict(),
               "joints": joints.to_dict(), "reference_stats": extra or {}}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_calibrations(path) -> tuple[IdmCalibration, JointCalibration, dict]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != CALIBRATION_FORMAT_VERSION:
        raise ValidationError(f"unsupported calibration version {payload.get('version')}")
    return (IdmCalibration.from_dict(payload["idm"]),
            JointCalibration.from_dict(payload["joints"]),
            payload.get("reference_stats", {}))
