"""Batch orchestration: generation, perturbation, calibration, verification,
labeling, recovery, and evaluation, with per-stage manifests.

Every stage is deterministic given (inputs, config, seed): per-rollout seeds
are derived structurally, output record order follows input order regardless
of worker scheduling, and all artifacts carry the config hash.
"""

from __future__ import annotations

import concurrent.futures
import logging
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .config import PipelineConfig
from .core import FailureType, Rollout, detect_keyframes
from .errors import SchemaError, TransportError, ValidationError
from .labels import generate_label, parse, serialize, LabelError
from .metrics import evaluate_dataset, render_report
from .perturb import (PerturbationSpec, draw_translation_offset,
                      inject_delay_close, inject_force_open, inject_translation,
                      inject_weak_close)
from .recovery import map_to_primitives, replay_with_recovery
from .rollout_io import (read_records, read_rollouts, rollout_from_record,
                         rollout_to_record, write_json, write_records,
                         write_rollouts)
from .semantic import client_from_endpoint
from .tracks import score_tracks
from .verify import (calibrate_idm, calibrate_joints, joint_exceedance,
                     load_calibrations, predictor_from_spec, save_calibrations,
                     verify_rollout)
from .world import ArtifactSpec, SceneSpec, resimulate, script_success, synthesize_observations

log = logging.getLogger(__name__)

FAILURE_TYPES = (FailureType.translation, FailureType.weak_close,
                 FailureType.force_open, FailureType.delay_close)


def _derived_seed(*parts: int) -> int:
    seed = 0
    for p in parts:
        seed = (seed * 1_000_003 + int(p) + 1) % (2 ** 62)
    return seed


def sample_scene(cfg: PipelineConfig, index: int) -> SceneSpec:
    """Deterministic per-rollout scene from the master seed."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed,
                                                       spawn_key=(10, index)))
    sc = cfg.scene
    for _ in range(1000):
        obj = (rng.uniform(*sc.object_x), rng.uniform(*sc.object_y), 0.02)
        goal = (rng.uniform(*sc.goal_x), rng.uniform(*sc.goal_y), 0.02)
        if np.linalg.norm(np.array(obj) - np.array(goal)) >= sc.min_separation:
            break
    else:
        raise ValidationError("could not sample a separated object/goal pair")
    return SceneSpec(object_pos=obj, goal_pos=goal,
                     grasp_tolerance=sc.grasp_tolerance,
                     attach_strength=sc.attach_strength,
                     partial_floor=sc.partial_floor, slip_delay=sc.slip_delay,
                     seed=_derived_seed(cfg.seed, index))


def cmd_generate(cfg: PipelineConfig, n: int, out_path, manifest_path=None) -> dict:
    """Script n successful demonstrations."""
    rollouts = []
    for i in range(n):
        scene = sample_scene(cfg, i)
        rollouts.append(script_success(scene, horizon=cfg.horizon,
                                       rollout_id=f"demo-{i:05d}"))
    write_rollouts(out_path, rollouts)
    manifest = {"stage": "generate", "count": n, "horizon": cfg.horizon,
                "seed": cfg.seed, "config_hash": cfg.config_hash()}
    if manifest_path:
        write_json(manifest_path, manifest)
    return manifest


def perturb_one(rollout: Rollout, cfg: PipelineConfig, index: int,
                failure_type: FailureType,
                artifacts: ArtifactSpec = ArtifactSpec()) -> tuple[Rollout, int]:
    """Inject one failure type into one success rollout and re-simulate.

    Returns (candidate, translation_resamples).
    """
    scene = SceneSpec.from_dict(rollout.meta["scene"])
    kfs = detect_keyframes(rollout)
    if not kfs:
        raise ValidationError(f"rollout {rollout.id} has no keyframe")
    k = kfs[0] - 1  # action index of the first closing command
    pc = cfg.perturb
    type_idx = FAILURE_TYPES.index(failure_type)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed,
                                                       spawn_key=(11, index, type_idx)))
    resamples = 0
    if failure_type is FailureType.delay_close:
        hi = min(pc.delay_max, rollout.horizon - 1 - k)
        if hi < pc.delay_min:
            raise ValidationError("horizon too short for the configured delay range")
        delay = int(rng.integers(pc.delay_min, hi + 1))
        actions, spec = inject_delay_close(rollout, k, delay, window=pc.window)
    elif failure_type is FailureType.weak_close:
        scale = float(rng.uniform(pc.weak_min, pc.weak_max))
        actions, spec = inject_weak_close(rollout, k, scale, window=pc.window)
    elif failure_type is FailureType.force_open:
        actions, spec = inject_force_open(rollout, k, window=pc.window)
    else:
        t_seed = _derived_seed(cfg.seed, index, type_idx)
        ox, oy, draws = draw_translation_offset(pc.sigma, t_seed,
                                                scene.grasp_tolerance, pc.offset_cap)
        resamples = draws - 1
        actions, spec = inject_translation(rollout, k, pc.window, pc.sigma, t_seed,
                                           scene.grasp_tolerance, pc.offset_cap,
                                           offsets=(ox, oy))
    cand = resimulate(scene, actions, rollout_id=f"{rollout.id}/{failure_type.value}",
                      task=rollout.task)
    meta = dict(cand.meta)
    meta["source_id"] = rollout.id
    meta["obs_seed"] = _derived_seed(cfg.seed, index, type_idx, 17)
    meta["artifacts"] = artifacts.to_dict()
    return replace(cand, spec=spec, meta=meta), resamples


def cmd_perturb(cfg: PipelineConfig, in_path, out_path, manifest_path=None,
                types: Optional[Sequence[str]] = None) -> dict:
    """One candidate failure per (input rollout, sampled failure type)."""
    wanted = tuple(FailureType(t) for t in types) if types else FAILURE_TYPES
    rollouts = read_rollouts(in_path)
    candidates = []
    resample_events = 0
    per_type = {ft.value: 0 for ft in wanted}
    for i, ro in enumerate(rollouts):
        for ft in wanted:
            cand, resamples = perturb_one(ro, cfg, i, ft)
            resample_events += resamples
            per_type[ft.value] += 1
            candidates.append(cand)
    write_rollouts(out_path, candidates)
    manifest = {"stage": "perturb", "inputs": len(rollouts),
                "candidates": len(candidates), "per_type": per_type,
                "translation_resamples": resample_events,
                "config_hash": cfg.config_hash()}
    if manifest_path:
        write_json(manifest_path, manifest)
    return manifest


def _with_observations(rollout: Rollout, cfg: PipelineConfig) -> Rollout:
    scene = SceneSpec.from_dict(rollout.meta["scene"])
    artifacts = ArtifactSpec.from_dict(rollout.meta.get("artifacts", {}))
    return synthesize_observations(rollout, scene, artifacts,
                                   seed=rollout.meta.get("obs_seed", 0))


def cmd_calibrate(cfg: PipelineConfig, successes_path, out_path) -> dict:
    """p95 calibration of the IDM and joint verifiers on success demos."""
    demos = [_with_observations(ro, cfg) for ro in read_rollouts(successes_path)]
    if not demos:
        raise ValidationError("cannot calibrate on an empty demo file")
    predictor = predictor_from_spec(cfg.verifier.predictor, seed=cfg.seed)
    vc = cfg.verifier
    idm = calibrate_idm(demos, predictor, percentile=vc.idm_percentile,
                        d=vc.idm_interval, eps=vc.idm_eps, margin=vc.idm_margin,
                        radian_weight=vc.radian_weight)
    joints = calibrate_joints(demos, percentile=vc.joint_percentile,
                              margin=vc.joint_margin)
    scores = [score_tracks(ro.tracks, cfg.tracks) for ro in demos]
    omega = [joint_exceedance(ro.joints, joints) for ro in demos]
    gt_stats = {
        "s_smooth": float(np.mean([s.s_smooth for s in scores])),
        "s_vis": float(np.mean([s.s_vis for s in scores])),
        "s_topo": float(np.mean([s.s_topo for s in scores])),
        "s_global": float(np.mean([s.s_global for s in scores])),
        "mae_xyz": idm.mae_xyz,
        "mae_rpy": idm.mae_rpy,
        "omega_exceed_p95": float(np.mean([o[0] for o in omega])),
        "alpha_exceed_p95": float(np.mean([o[1] for o in omega])),
        "demos": len(demos),
        "config_hash": cfg.config_hash(),
    }
    save_calibrations(out_path, idm, joints, extra=gt_stats)
    return gt_stats


def _verify_worker(args):
    rec, cfg_dict = args
    from .config import _build  # local import keeps the worker picklable
    cfg = _build(PipelineConfig, cfg_dict)
    cand = rollout_from_record(rec)
    return rollout_to_record(_with_observations(cand, cfg))


def cmd_verify(cfg: PipelineConfig, candidates_path, calib_path, out_path,
               manifest_path=None) -> dict:
    """Run the four-verifier gate over a candidate file."""
    idm_calib, joint_calib, gt_stats = load_calibrations(calib_path)
    predictor = predictor_from_spec(cfg.verifier.predictor, seed=cfg.seed)
    client = client_from_endpoint(cfg.semantic_endpoint, cfg.verifier.visual_floors)
    records = list(read_records(candidates_path))

    if cfg.workers > 1:
        cfg_dict = cfg.to_dict()
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            observed = list(pool.map(_verify_worker,
                                     [(rec, cfg_dict) for rec in records]))
        candidates = [rollout_from_record(rec) for rec in observed]
    else:
        candidates = [_with_observations(rollout_from_record(rec), cfg)
                      for rec in records]

    retained_records = []
    counts = {"semantic_validity": 0, "semantic_visual": 0, "idm": 0,
              "joint": 0, "track": 0}
    quarantined = rejected = 0
    gen_scores, gen_mae, gen_exceed = [], [], []
    for rec, cand in zip(records, candidates):
        try:
            report = verify_rollout(cand, None, predictor, idm_calib, joint_calib,
                                    client, cfg.tracks)
        except TransportError as exc:
            log.warning("quarantining %s: %s", cand.id, exc)
            quarantined += 1
            continue
        if not report.semantic_valid_failure:
            counts["semantic_validity"] += 1
        if not report.semantic_visual_ok:
            counts["semantic_visual"] += 1
        if not report.idm_pass:
            counts["idm"] += 1
        if not report.joint_pass:
            counts["joint"] += 1
        if not report.track_pass:
            counts["track"] += 1
        if report.track_scores is not None:
            gen_scores.append(report.track_scores)
        gen_mae.append((report.idm_mae_xyz, report.idm_mae_rpy))
        gen_exceed.append(joint_exceedance(cand.joints, joint_calib))
        if report.retained:
            out = dict(rec)
            meta = dict(out.get("meta", {}))
            meta["verifier"] = report.to_dict()
            out["meta"] = meta
            retained_records.append(out)
        else:
            rejected += 1
    write_records(out_path, retained_records)
    generated = len(records)
    gen_stats = {
        "s_smooth": float(np.mean([s.s_smooth for s in gen_scores])) if gen_scores else None,
        "s_vis": float(np.mean([s.s_vis for s in gen_scores])) if gen_scores else None,
        "s_topo": float(np.mean([s.s_topo for s in gen_scores])) if gen_scores else None,
        "s_global": float(np.mean([s.s_global for s in gen_scores])) if gen_scores else None,
        "mae_xyz": float(np.mean([m[0] for m in gen_mae])) if gen_mae else None,
        "mae_rpy": float(np.mean([m[1] for m in gen_mae])) if gen_mae else None,
        "omega_exceed_p95": float(np.mean([e[0] for e in gen_exceed])) if gen_exceed else None,
        "alpha_exceed_p95": float(np.mean([e[1] for e in gen_exceed])) if gen_exceed else None,
    }
    manifest = {
        "stage": "verify",
        "generated": generated,
        "retained": len(retained_records),
        "rejected": rejected,
        "quarantined": quarantined,
        "retention_rate": (len(retained_records) / generated) if generated else None,
        "rejections": counts,
        "stats": {"generated": gen_stats, "ground_truth": gt_stats},
        "config_hash": cfg.config_hash(),
    }
    assert manifest["retained"] + rejected + quarantined == generated
    if manifest_path:
        write_json(manifest_path, manifest)
    return manifest


def cmd_label(cfg: PipelineConfig, retained_path, out_path,
              manifest_path=None) -> dict:
    """Attach the deterministic serialized fix label to every record."""
    out_records = []
    for rec in read_records(retained_path):
        spec = None if rec.get("spec") is None else PerturbationSpec.from_dict(rec["spec"])
        attach = rec.get("meta", {}).get("scene", {}).get("attach_strength", 0.7)
        label = generate_label(spec, bin_size=cfg.label.bin_size,
                               attach_strength=attach,
                               strength_margin=cfg.label.strength_margin)
        text = serialize(label)
        if parse(text) != label:
            raise SchemaError(f"label round-trip failed for {rec['id']}")
        rec = dict(rec)
        rec["label"] = text
        out_records.append(rec)
    write_records(out_path, out_records)
    manifest = {"stage": "label", "count": len(out_records),
                "config_hash": cfg.config_hash()}
    if manifest_path:
        write_json(manifest_path, manifest)
    return manifest


def recover_record(cfg: PipelineConfig, rec: dict,
                   label_text: Optional[str] = None) -> dict:
    """Parse a label, map it to primitives, replay, and score one case."""
    cand = rollout_from_record(rec)
    scene = SceneSpec.from_dict(cand.meta["scene"])
    text = label_text if label_text is not None else rec.get("label")
    if text is None:
        raise SchemaError(f"record {rec['id']} carries no label")
    entry = {"id": rec["id"], "label": text}
    try:
        label = parse(text)
        keyframe = cand.spec.keyframe if cand.spec is not None else None
        prims = map_to_primitives(label, cfg.label.bin_size, keyframe=keyframe)
    except (LabelError, SchemaError, ValidationError) as exc:
        entry.update(recovered=False, error=f"{type(exc).__name__}: {exc}",
                     primitives=[])
        return entry
    _, ok = replay_with_recovery(scene, cand.actions, prims,
                                 ramp_window=cfg.perturb.window)
    entry.update(recovered=bool(ok), error=None,
                 primitives=[{"kind": type(p).__name__, **vars(p)} for p in prims])
    return entry


def cmd_recover(cfg: PipelineConfig, labeled_path, out_path,
                predictions_path=None, manifest_path=None) -> dict:
    """Replay predicted (or self-paired) corrections and report recovery rate."""
    preds = None
    if predictions_path:
        preds = _load_predictions(predictions_path)
    entries = []
    for rec in read_records(labeled_path):
        text = None
        if preds is not None:
            if rec["id"] not in preds:
                raise SchemaError(f"prediction file missing id {rec['id']}")
            text = preds[rec["id"]]
        entries.append(recover_record(cfg, rec, label_text=text))
    if not entries:
        raise ValidationError("no cases to recover")
    write_records(out_path, entries)
    rate = sum(e["recovered"] for e in entries) / len(entries)
    manifest = {"stage": "recover", "cases": len(entries),
                "recovered": int(sum(e["recovered"] for e in entries)),
                "recovery_rate": rate, "config_hash": cfg.config_hash()}
    if manifest_path:
        write_json(manifest_path, manifest)
    return manifest


def _load_predictions(path) -> dict:
    preds = {}
    for rec in read_records(path):
        if "id" not in rec or "pred_text" not in rec:
            raise SchemaError("prediction records need {id, pred_text}")
        preds[rec["id"]] = rec["pred_text"]
    return preds


def cmd_evaluate(cfg: PipelineConfig, labeled_path, predictions_path,
                 report_path=None) -> dict:
    """Score a prediction file against ground-truth labels."""
    preds = _load_predictions(predictions_path)
    pairs = []
    missing = []
    for rec in read_records(labeled_path):
        if rec["id"] not in preds:
            missing.append(rec["id"])
            continue
        pairs.append((rec["id"], rec["label"], preds[rec["id"]]))
    if missing:
        raise SchemaError(f"prediction file missing ids: {missing}")
    report = evaluate_dataset(pairs, cap=cfg.cap, delta_k=cfg.delta_k)
    report["config_hash"] = cfg.config_hash()
    if report_path:
        write_json(report_path, report)
    return report


def render_text_report(report: dict) -> str:
    return render_report(report)
