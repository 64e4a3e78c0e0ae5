"""Command-line entry point.

Verbs: synth, ingest, aggregate, features, detect, evaluate, run.
All verbs except the standalone evaluate form take a run-config YAML; each
stage reads and writes only the documented CSV / structured-text formats.

Exit codes: 0 success, 1 config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline
from .config import load_run_config
from .errors import ConfigError, DataError, NumericError
from .evaluate import render_report_text


def _add_config_verb(subparsers, name: str, help_text: str):
    parser = subparsers.add_parser(name, help=help_text)
    parser.add_argument("-c", "--config", required=True, help="run-config YAML file")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odanomaly",
        description="Three-stage anomaly detection for daily OD mobility networks.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    _add_config_verb(sub, "synth", "write synthetic dataset CSVs")
    _add_config_verb(sub, "ingest", "parse trips into the raw tensor and calendar")
    _add_config_verb(sub, "aggregate", "partition the mean graph and aggregate flows")
    _add_config_verb(sub, "features", "train feature learners and write latents")
    _add_config_verb(sub, "detect", "fit GMMs and write per-day scores")
    _add_config_verb(sub, "run", "execute every stage end to end")

    ev = sub.add_parser("evaluate", help="best-F1 evaluation of persisted scores")
    group = ev.add_mutually_exclusive_group(required=True)
    group.add_argument("-c", "--config", help="re-evaluate every method of a run")
    group.add_argument("--scores", help="standalone: a scores CSV")
    ev.add_argument("--holidays", help="standalone: a holiday CSV")
    ev.add_argument("--method", default="scores", help="method name for the report row")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def _dispatch(args: argparse.Namespace) -> int:
    if args.verb == "evaluate" and args.scores:
        if not args.holidays:
            raise ConfigError("standalone evaluate needs --holidays")
        report = pipeline.evaluate_standalone(args.scores, args.holidays, args.method)
        sys.stdout.write(render_report_text([report]))
        return 0

    cfg = load_run_config(args.config)
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.verb == "synth":
        pipeline.stage_synth(cfg, outdir)
        print(f"wrote synthetic dataset under {outdir}")
    elif args.verb == "ingest":
        pipeline.stage_ingest(cfg, outdir)
        print(f"wrote tensor and calendar under {outdir}")
    elif args.verb == "aggregate":
        achieved = pipeline.stage_aggregate(cfg, outdir)
        print(f"aggregated into {achieved} communities under {outdir}")
    elif args.verb == "features":
        pipeline.stage_features(cfg, outdir)
        print(f"wrote latents for {cfg.method_keys()} under {outdir}")
    elif args.verb == "detect":
        achieved = pipeline.stage_detect(cfg, outdir)
        print(f"wrote scores under {outdir} (components: {achieved})")
    elif args.verb == "evaluate":
        reports = pipeline.stage_evaluate(cfg, outdir)
        sys.stdout.write(render_report_text(reports))
    elif args.verb == "run":
        pipeline.run_pipeline(cfg)
        report_text = (outdir / "report.txt").read_text(encoding="utf-8")
        sys.stdout.write(report_text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
