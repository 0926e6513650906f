"""Line-delimited JSON persistence for rollouts and generic records.

One rollout per line with fields in the fixed order id, task, states,
actions, joints, tracks, spec, outcome (plus an optional trailing meta
object for provenance). Angles are radians, lengths meters. Serialization
is byte-stable: compact separators, insertion-ordered keys, repr-shortest
floats.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .core import Action, EndEffectorState, JointTrace, Rollout, TrackSet
from .errors import SchemaError
from .perturb import PerturbationSpec


def dumps_record(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def rollout_to_record(rollout: Rollout) -> dict:
    rec = {
        "id": rollout.id,
        "task": rollout.task,
        "states": [list(s.as_tuple()) for s in rollout.states],
        "actions": [list(a.as_tuple()) for a in rollout.actions],
        "joints": None if rollout.joints is None else rollout.joints.q.tolist(),
        "tracks": None if rollout.tracks is None else {
            "points": rollout.tracks.points.tolist(),
            "masks": rollout.tracks.masks.astype(int).tolist(),
        },
        "spec": None if rollout.spec is None else rollout.spec.to_dict(),
        "outcome": rollout.outcome,
    }
    if rollout.meta:
        rec["meta"] = rollout.meta
    return rec


def rollout_from_record(rec: dict) -> Rollout:
    try:
        tracks = None
        if rec.get("tracks") is not None:
            tracks = TrackSet(points=np.array(rec["tracks"]["points"], dtype=float),
                              masks=np.array(rec["tracks"]["masks"], dtype=bool))
        return Rollout(
            id=rec["id"],
            task=rec["task"],
            states=[EndEffectorState(*s) for s in rec["states"]],
            actions=[Action(*a) for a in rec["actions"]],
            joints=None if rec.get("joints") is None else JointTrace(np.array(rec["joints"])),
            tracks=tracks,
            spec=None if rec.get("spec") is None else PerturbationSpec.from_dict(rec["spec"]),
            outcome=rec.get("outcome"),
            meta=rec.get("meta", {}),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed rollout record: {exc}") from exc


def write_rollouts(path, rollouts: Iterable[Rollout]) -> int:
    n = 0
    with open(path, "w") as fh:
        for ro in rollouts:
            fh.write(dumps_record(rollout_to_record(ro)) + "\n")
            n += 1
    return n


def read_rollouts(path) -> list[Rollout]:
    return [rollout_from_record(rec) for rec in read_records(path)]


def read_records(path) -> Iterator[dict]:
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{i + 1}: invalid JSON: {exc}") from exc


def write_records(path, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")
            n += 1
    return n


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
