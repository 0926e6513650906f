import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from failsynth.core import JointTrace, TrackSet
from failsynth.errors import InsufficientTrackingError, ValidationError
from failsynth.semantic import MockSemanticVerifier
from failsynth.tracks import (TrackScoreConfig, fit_affine, quantile_sorted,
                              score_tracks)
from failsynth.verify import (IdmCalibration, NoisyPredictor, OraclePredictor,
                              calibrate_idm, calibrate_joints, gate,
                              joint_derivatives, load_calibrations,
                              predictor_from_spec, save_calibrations,
                              verify_idm, verify_joints, verify_rollout)
from failsynth.world import ArtifactSpec, synthesize_observations


def _static_tracks(m=30, n=20, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.uniform(0, 640, size=(m, 1, 2))
    pts = np.repeat(base, n, axis=1)
    return TrackSet(pts, np.ones((m, n), bool))


class TestQuantile:
    @given(st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1,
                    max_size=200),
           st.floats(min_value=0.0, max_value=1.0))
    @settings(max_examples=200, deadline=None)
    def test_matches_numpy_linear_interpolation(self, xs, q):
        assert quantile_sorted(xs, q) == pytest.approx(
            float(np.quantile(np.array(xs), q, method="linear")), abs=1e-9)

    def test_domain(self):
        with pytest.raises(ValidationError):
            quantile_sorted([], 0.5)
        with pytest.raises(ValidationError):
            quantile_sorted([1.0], 1.5)


class TestTrackScores:
    def test_static_full_visibility_scores_one(self):
        s = score_tracks(_static_tracks())
        for v in (s.s_smooth, s.s_vis, s.s_topo, s.s_global, s.s_pt):
            assert v == pytest.approx(1.0, abs=1e-9)

    def test_rigid_translation(self):
        tr = _static_tracks()
        shift = np.arange(tr.num_frames)[None, :, None] * np.array([2.0, -1.0])
        pts = tr.points + shift
        moved = TrackSet(pts, tr.masks)
        s = score_tracks(moved)
        assert s.s_topo == pytest.approx(1.0, abs=1e-9)
        for t in range(tr.num_frames - 1):
            _, rmse = fit_affine(pts[:, t], pts[:, t + 1])
            assert rmse < 1e-9

    def test_insufficient_visibility_raises(self):
        tr = _static_tracks()
        masks = tr.masks.copy()
        masks[: tr.num_tracks // 2 + 3, ::2] = False  # half the tracks flicker hard
        with pytest.raises(InsufficientTrackingError):
            score_tracks(TrackSet(tr.points, masks))

    def test_too_few_first_frame_tracks_raises(self):
        tr = _static_tracks()
        masks = tr.masks.copy()
        masks[4:, 0] = False
        with pytest.raises(InsufficientTrackingError):
            score_tracks(TrackSet(tr.points, masks), TrackScoreConfig(
                min_track_visibility=0.5, min_visible_fraction=0.0))

    def test_weight_validation(self):
        with pytest.raises(ValidationError):
            TrackScoreConfig(weights=(0.5, 0.5, 0.5, 0.5))

    @pytest.mark.parametrize("artifact,attr", [
        ("jitter_px", "s_smooth"),
        ("flicker_rate", "s_vis"),
        ("topo_warp", "s_topo"),
    ])
    def test_artifact_monotonicity_quick(self, demo, scene, artifact, attr):
        levels = [0.0, 0.1, 1.0, 4.0] if artifact != "flicker_rate" else \
            [0.0, 0.05, 0.2, 0.5]
        means = []
        for lv in levels:
            vals = []
            for seed in range(5):
                ro = synthesize_observations(demo, scene,
                                             ArtifactSpec(**{artifact: lv}),
                                             seed=seed)
                try:
                    vals.append(getattr(score_tracks(ro.tracks), attr))
                except InsufficientTrackingError:
                    vals.append(0.0)
            means.append(np.mean(vals))
        assert all(a >= b - 1e-9 for a, b in zip(means, means[1:]))


class TestIdm:
    def test_oracle_zero_error(self, demos, calibrations):
        idm, _ = calibrations
        for ro in demos:
            res = verify_idm(ro, OraclePredictor(), idm)
            assert res.q == 0.0 and res.passed
            assert len(res.errors) == ro.horizon - idm.d + 1

    def test_biased_predictor_fails(self, demos, calibrations):
        idm, _ = calibrations
        biased = NoisyPredictor(bias=[0.05, 0, 0, 0, 0, 0])
        assert not verify_idm(demos[0], biased, idm).passed

    def test_radian_weight_scales_rotation_error(self, demos):
        spun = NoisyPredictor(bias=[0, 0, 0, 0, 0, 1.0])
        calib = IdmCalibration(tau=0.5, tau_raw=0.25, d=4, percentile=0.95,
                               mae_xyz=0, mae_rpy=0, margin=2.0,
                               radian_weight=0.1)
        res = verify_idm(demos[0], spun, calib)
        assert res.q == pytest.approx(0.1)  # 1 rad scaled by 0.1
        assert res.passed

    def test_noisy_calibration_retains_heldout(self, demos):
        pred = NoisyPredictor(sigma_xyz=0.002, sigma_rpy=0.01, seed=1)
        calib = calibrate_idm(demos[:4], pred, margin=2.0)
        assert all(verify_idm(ro, pred, calib).passed for ro in demos[4:])

    def test_noisy_predictor_deterministic(self, demos):
        a = NoisyPredictor(sigma_xyz=0.01, seed=3)(demos[0], 2, 4)
        b = NoisyPredictor(sigma_xyz=0.01, seed=3)(demos[0], 2, 4)
        assert np.array_equal(a, b)

    def test_predictor_spec_parsing(self):
        assert isinstance(predictor_from_spec("oracle"), OraclePredictor)
        noisy = predictor_from_spec("noisy:0.01,0.02", seed=9)
        assert (noisy.sigma_xyz, noisy.sigma_rpy) == (0.01, 0.02)
        with pytest.raises(ValueError):
            predictor_from_spec("magic")

    def test_interval_domain(self, demos, calibrations):
        idm, _ = calibrations
        bad = IdmCalibration(tau=idm.tau, tau_raw=idm.tau_raw, d=1000,
                             percentile=0.95, mae_xyz=0, mae_rpy=0, margin=2.0)
        with pytest.raises(ValidationError):
            verify_idm(demos[0], OraclePredictor(), bad)


class TestJoints:
    def test_derivative_hand_values(self):
        q = np.zeros((3, 7))
        q[:, 0] = [0.0, 1.0, 4.0]
        qd, qdd = joint_derivatives(JointTrace(q))
        assert qd[1, 0] == pytest.approx(2.0)   # (4 - 0) / 2
        assert qd[0, 0] == pytest.approx(1.0)   # one-sided
        assert qd[2, 0] == pytest.approx(3.0)
        assert qdd[1, 0] == pytest.approx(2.0)  # 4 - 2*1 + 0

    def test_limit_violation(self, calibrations):
        _, jc = calibrations
        q = np.tile((jc.q_min + jc.q_max) / 2.0, (10, 1))
        q[4, 2] = jc.q_max[2] + 0.1
        violations, ok = verify_joints(JointTrace(q), jc)
        assert not ok
        assert (4, 2, "limit") in violations

    def test_clean_demos_pass(self, demos, calibrations):
        _, jc = calibrations
        for ro in demos:
            _, ok = verify_joints(ro.joints, jc)
            assert ok

    def test_spike_rejected_as_acceleration(self, demos, calibrations, scene):
        _, jc = calibrations
        from failsynth.world import SceneSpec
        ro = demos[0]
        sc = SceneSpec.from_dict(ro.meta["scene"])
        spiked = synthesize_observations(ro, sc, ArtifactSpec(joint_spike=0.5),
                                         seed=0)
        violations, ok = verify_joints(spiked.joints, jc)
        assert not ok
        mid = len(spiked.joints) // 2
        kinds = {(t, kind) for t, j, kind in violations if j == 0}
        assert ("acceleration" in {k for _, k in kinds})
        assert any(abs(t - mid) <= 1 for t, k in kinds if k == "acceleration")


class TestGate:
    def test_conjunction_truth_table(self):
        for bits in itertools.product([False, True], repeat=5):
            assert gate(*bits) == all(bits)


class TestCalibrationIO:
    def test_round_trip(self, calibrations, tmp_path):
        idm, jc = calibrations
        path = tmp_path / "calib.json"
        save_calibrations(path, idm, jc, extra={"demos": 6})
        idm2, jc2, extra = load_calibrations(path)
        assert idm2 == idm
        assert np.array_equal(jc2.q_min, jc.q_min)
        assert (jc2.tau_v, jc2.tau_a) == (jc.tau_v, jc.tau_a)
        assert extra == {"demos": 6}

    def test_version_check(self, calibrations, tmp_path):
        import json
        idm, jc = calibrations
        path = tmp_path / "calib.json"
        save_calibrations(path, idm, jc)
        payload = json.loads(path.read_text())
        payload["version"] = 99
        path.write_text(json.dumps(payload))
        with pytest.raises(ValidationError):
            load_calibrations(path)


class TestVerifyRollout:
    def test_clean_failure_retained(self, demos, calibrations, cfg):
        from failsynth.core import FailureType
        from failsynth.pipeline import perturb_one, _with_observations
        idm, jc = calibrations
        cand, _ = perturb_one(demos[0], cfg, 0, FailureType.translation)
        cand = _with_observations(cand, cfg)
        report = verify_rollout(cand, None, OraclePredictor(), idm, jc,
                                MockSemanticVerifier(), cfg.tracks)
        assert report.retained
        assert report.to_dict()["retained"] is True

    def test_unperturbed_success_rejected_semantically(self, demos, calibrations,
                                                       cfg):
        idm, jc = calibrations
        report = verify_rollout(demos[0], None, OraclePredictor(), idm, jc,
                                MockSemanticVerifier(), cfg.tracks)
        assert not report.semantic_valid_failure
        assert not report.retained

    def test_insufficient_tracking_blocks_retention(self, demos, calibrations,
                                                    cfg):
        from dataclasses import replace
        idm, jc = calibrations
        ro = demos[0]
        masks = ro.tracks.masks.copy()
        masks[:80, ::2] = False
        broken = replace(ro, tracks=TrackSet(ro.tracks.points, masks),
                         meta={**ro.meta, "outcome_override": None},
                         outcome="fail")
        report = verify_rollout(broken, None, OraclePredictor(), idm, jc,
                                MockSemanticVerifier(), cfg.tracks)
        assert not report.track_confident
        assert not report.track_pass
        assert not report.retained
