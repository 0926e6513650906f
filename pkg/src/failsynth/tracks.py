"""Point-track temporal-coherence scoring.

Four complementary scores over a set of 2D tracks with visibility masks:
motion smoothness, visibility stability, local topology stability, and
global continuity (per-adjacent-pair affine fits). Each score is clipped to
[0, 1] and combined into a weighted total used by the retention gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import TrackSet
from .errors import InsufficientTrackingError, ValidationError


def quantile_sorted(values, q: float) -> float:
    """Sort-based linear-interpolation quantile of a pooled sample."""
    xs = np.sort(np.asarray(values, dtype=float).ravel())
    if xs.size == 0:
        raise ValidationError("quantile of an empty sample")
    if not 0.0 <= q <= 1.0:
        raise ValidationError(f"quantile {q} outside [0, 1]")
    pos = q * (xs.size - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, xs.size - 1)
    frac = pos - lo
    return float(xs[lo] + (xs[hi] - xs[lo]) * frac)


@dataclass(frozen=True)
class TrackScoreConfig:
    """Thresholds and weights for track scoring; paper leaves these open."""

    tau_acc: float = 2.0        # px/step^2
    tau_topo: float = 0.08
    tau_rmse: float = 1.5       # px
    tau_jitter: float = 0.5
    knn_k: int = 4
    eps: float = 1e-6           # px, topology denominator guard
    weights: tuple = (0.25, 0.25, 0.25, 0.25)
    spike_ratio: float = 5.0    # spike = accel above this multiple of the track median
    spike_floor: float = 10.0   # px/step^2, absolute floor under the spike threshold
    acc_quantile: float = 0.95
    global_quantile: float = 0.9
    min_track_visibility: float = 0.8   # a track counts as confident if visible this often
    min_visible_fraction: float = 0.6   # required fraction of confident tracks
    retention_floor: float = 0.75       # gate floor on the total score

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValidationError("track score weights must sum to 1")


@dataclass(frozen=True)
class PointTrackScores:
    s_smooth: float
    s_vis: float
    s_topo: float
    s_global: float
    s_pt: float

    def to_dict(self) -> dict:
        return {"s_smooth": self.s_smooth, "s_vis": self.s_vis,
                "s_topo": self.s_topo, "s_global": self.s_global, "s_pt": self.s_pt}


def _clip01(v: float) -> float:
    return float(min(1.0, max(0.0, v)))


def _smoothness(points, masks, cfg: TrackScoreConfig) -> float:
    acc = points[:, 2:] - 2.0 * points[:, 1:-1] + points[:, :-2]
    valid = masks[:, 2:] & masks[:, 1:-1] & masks[:, :-2]
    mag = np.linalg.norm(acc, axis=2)
    pooled = mag[valid]
    if pooled.size == 0:
        return 0.0
    q = quantile_sorted(pooled, cfg.acc_quantile)
    med = np.full(mag.shape[0], np.inf)
    for i in range(mag.shape[0]):
        vi = mag[i][valid[i]]
        if vi.size:
            med[i] = np.median(vi)
    # the absolute floor keeps intentional keypoint motion (near-zero median
    # acceleration on mostly-stationary tracks) from registering as transients
    thr = np.maximum(cfg.spike_ratio * med, cfg.spike_floor)
    spikes = valid & (mag > thr[:, None])
    n_frames = mag.shape[1]
    r_spike = float(np.count_nonzero(spikes.any(axis=0))) / n_frames
    return _clip01(math.exp(-q / cfg.tau_acc) * (1.0 - r_spike))


def _visibility(masks) -> float:
    flips = masks[:, 1:] != masks[:, :-1]
    rates = flips.mean(axis=1)
    return _clip01(1.0 - float(np.median(rates)))


def _topology(points, masks, cfg: TrackScoreConfig) -> float:
    vis0 = np.nonzero(masks[:, 0])[0]
    if vis0.size < cfg.knn_k + 1:
        return 0.0
    p0 = points[vis0, 0]
    dmat = np.linalg.norm(p0[:, None] - p0[None, :], axis=2)
    np.fill_diagonal(dmat, np.inf)
    edges = set()
    order = np.argsort(dmat, axis=1)
    for a in range(p0.shape[0]):
        for b in order[a, :cfg.knn_k]:
            edges.add((min(a, int(b)), max(a, int(b))))
    edges = sorted(edges)
    ia = vis0[[e[0] for e in edges]]
    ib = vis0[[e[1] for e in edges]]
    d0 = np.linalg.norm(points[ia, 0] - points[ib, 0], axis=1)
    dt = np.linalg.norm(points[ia, 1:] - points[ib, 1:], axis=2)
    both = masks[ia, 1:] & masks[ib, 1:]
    u = np.abs(dt - d0[:, None]) / (d0[:, None] + cfg.eps)
    pooled = u[both]
    if pooled.size == 0:
        return 0.0
    return _clip01(math.exp(-float(np.median(pooled)) / cfg.tau_topo))


def fit_affine(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares 2D affine fit dst ~= [src 1] @ theta; returns (theta, rmse)."""
    if src.shape[0] < 3:
        raise ValidationError("affine fit needs at least 3 points")
    X = np.concatenate([src, np.ones((src.shape[0], 1))], axis=1)
    theta, *_ = np.linalg.lstsq(X, dst, rcond=None)
    resid = X @ theta - dst
    rmse = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
    return theta, rmse


def _robust_affine(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, float]:
    """Affine fit with one residual-trimmed refit.

    Independently moving keypoints are outliers to the dominant (static-scene)
    frame-to-frame transform; dropping them isolates the continuity of the
    global motion from legitimate object motion.
    """
    theta, rmse = fit_affine(src, dst)
    X = np.concatenate([src, np.ones((src.shape[0], 1))], axis=1)
    resid = np.linalg.norm(X @ theta - dst, axis=1)
    keep = resid <= 3.0 * np.median(resid) + 1e-9
    if 3 <= np.count_nonzero(keep) < src.shape[0]:
        theta, rmse = fit_affine(src[keep], dst[keep])
    return theta, rmse


def _global_continuity(points, masks, cfg: TrackScoreConfig) -> float:
    n = points.shape[1]
    rmses, thetas = [], []
    for t in range(n - 1):
        both = masks[:, t] & masks[:, t + 1]
        if np.count_nonzero(both) < 3:
            thetas.append(None)
            continue
        theta, rmse = _robust_affine(points[both, t], points[both, t + 1])
        rmses.append(rmse)
        thetas.append(theta)
    if not rmses:
        return 0.0
    jitters = []
    for a, b in zip(thetas[:-1], thetas[1:]):
        if a is not None and b is not None:
            jitters.append(float(np.linalg.norm(a - b)))
    q_rmse = quantile_sorted(rmses, cfg.global_quantile)
    q_jit = quantile_sorted(jitters, cfg.global_quantile) if jitters else 0.0
    return _clip01(0.7 * math.exp(-q_rmse / cfg.tau_rmse)
                   + 0.3 * math.exp(-q_jit / cfg.tau_jitter))


def score_tracks(tracks: TrackSet, cfg: TrackScoreConfig = TrackScoreConfig()) -> PointTrackScores:
    """Score one track set; raises InsufficientTrackingError on low confidence."""
    points, masks = tracks.points, tracks.masks
    if tracks.num_frames < 3:
        raise ValidationError("need at least 3 frames to score tracks")
    confident = masks.mean(axis=1) >= cfg.min_track_visibility
    if np.count_nonzero(confident) < cfg.min_visible_fraction * tracks.num_tracks:
        raise InsufficientTrackingError(
            f"only {int(np.count_nonzero(confident))}/{tracks.num_tracks} tracks "
            "are confidently visible; discarding clip")
    if np.count_nonzero(masks[:, 0]) < cfg.knn_k + 1:
        raise InsufficientTrackingError("too few visible tracks in the first frame")
    s_smooth = _smoothness(points, masks, cfg)
    s_vis = _visibility(masks)
    s_topo = _topology(points, masks, cfg)
    s_global = _global_continuity(points, masks, cfg)
    w1, w2, w3, w4 = cfg.weights
    s_pt = _clip01(w1 * s_smooth + w2 * s_vis + w3 * s_topo + w4 * s_global)
    return PointTrackScores(s_smooth, s_vis, s_topo, s_global, s_pt)
