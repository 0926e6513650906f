"""Command-line front end for the failure-synthesis pipeline.

Stages: generate -> perturb -> calibrate -> verify -> label -> recover /
evaluate -> report. Exit codes: 0 ok, 1 unexpected error, 2 schema error,
3 transport error, 4 validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import SchemaError, TransportError, ValidationError
from .rollout_io import read_json


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (all keys optional)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--workers", type=int, help="override the worker count")
    p.add_argument("--endpoint", help="override the semantic verifier endpoint "
                                      "(mock | pipe:<cmd> | http(s)://<url>)")
    p.add_argument("-v", "--verbose", action="store_true")


def _config(args) -> "pipeline.PipelineConfig":
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if getattr(args, "endpoint", None):
        overrides["semantic_endpoint"] = args.endpoint
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="failsynth",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="script successful demonstrations")
    p.add_argument("-n", type=int, default=10, help="number of demonstrations")
    p.add_argument("-o", "--out", required=True, help="output rollout JSONL")
    p.add_argument("--manifest", help="manifest JSON path")
    _add_common(p)

    p = sub.add_parser("perturb", help="inject failures into demonstrations")
    p.add_argument("-i", "--input", required=True, help="success rollout JSONL")
    p.add_argument("-o", "--out", required=True, help="candidate rollout JSONL")
    p.add_argument("--types", help="comma-separated failure-type subset")
    p.add_argument("--manifest", help="manifest JSON path")
    _add_common(p)

    p = sub.add_parser("calibrate", help="calibrate verifier thresholds on demos")
    p.add_argument("-i", "--input", required=True, help="success rollout JSONL")
    p.add_argument("-o", "--out", required=True, help="calibration JSON")
    _add_common(p)

    p = sub.add_parser("verify", help="run the four-verifier retention gate")
    p.add_argument("-i", "--input", required=True, help="candidate rollout JSONL")
    p.add_argument("--calibration", required=True, help="calibration JSON")
    p.add_argument("-o", "--out", required=True, help="retained rollout JSONL")
    p.add_argument("--manifest", help="manifest JSON path")
    _add_common(p)

    p = sub.add_parser("label", help="attach deterministic paired fix labels")
    p.add_argument("-i", "--input", required=True, help="retained rollout JSONL")
    p.add_argument("-o", "--out", required=True, help="labeled rollout JSONL")
    p.add_argument("--manifest", help="manifest JSON path")
    _add_common(p)

    p = sub.add_parser("recover", help="replay corrections and score recovery")
    p.add_argument("-i", "--input", required=True, help="labeled rollout JSONL")
    p.add_argument("-o", "--out", required=True, help="per-case result JSONL")
    p.add_argument("--predictions", help="optional prediction JSONL "
                                         "({id, pred_text} per line)")
    p.add_argument("--manifest", help="manifest JSON path")
    _add_common(p)

    p = sub.add_parser("evaluate", help="score predicted labels against GT")
    p.add_argument("-i", "--input", required=True, help="labeled rollout JSONL")
    p.add_argument("--predictions", required=True, help="prediction JSONL")
    p.add_argument("-o", "--out", help="report JSON path")
    _add_common(p)

    p = sub.add_parser("report", help="render an evaluation report as text")
    p.add_argument("-i", "--input", required=True, help="report JSON path")
    _add_common(p)
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        print(pipeline.render_text_report(read_json(args.input)))
        return 0
    cfg = _config(args)
    if args.command == "generate":
        out = pipeline.cmd_generate(cfg, args.n, args.out, args.manifest)
    elif args.command == "perturb":
        types = args.types.split(",") if args.types else None
        out = pipeline.cmd_perturb(cfg, args.input, args.out, args.manifest,
                                   types=types)
    elif args.command == "calibrate":
        out = pipeline.cmd_calibrate(cfg, args.input, args.out)
    elif args.command == "verify":
        out = pipeline.cmd_verify(cfg, args.input, args.calibration, args.out,
                                  args.manifest)
    elif args.command == "label":
        out = pipeline.cmd_label(cfg, args.input, args.out, args.manifest)
    elif args.command == "recover":
        out = pipeline.cmd_recover(cfg, args.input, args.out,
                                   predictions_path=args.predictions,
                                   manifest_path=args.manifest)
    elif args.command == "evaluate":
        out = pipeline.cmd_evaluate(cfg, args.input, args.predictions,
                                    report_path=args.out)
        print(pipeline.render_text_report(out))
        return 0
    else:  # unreachable with required=True
        raise ValueError(args.command)
    print(json.dumps(out, indent=2, sort_keys=True, default=str))
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
