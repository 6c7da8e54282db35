"""Command line entry point: ``advsep run|ingest|report|verify``.

Exit codes: 0 when every declared criterion passes, 1 when a criterion
fails, 2 for invalid input (config, CSV, missing run), 3 when ``verify``
finds a replay that does not reproduce the stored results.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from ..exceptions import ConfigError, ExperimentError, IngestError
from .config import FORMATS, ExperimentConfig
from .experiments import run_experiment
from .report import emit_report, flatten, load_report

OUTPUT_ROOT_ENV = "ADVSEP_OUTPUT_ROOT"

EXIT_OK, EXIT_FAILED, EXIT_INPUT, EXIT_MISMATCH = 0, 1, 2, 3


def output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _default_run_dir(cfg):
    digest = hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()[:10]
    return output_root() / f"{cfg.kind}-{digest}"


def _print_summary(report, run_dir):
    for c in report.criteria:
        mark = "PASS" if c["passed"] else "FAIL"
        print(f"[{mark}] {c['name']}: {c['value']} {c['comparator']} {c['threshold']}")
    if not report.criteria:
        print("no criteria declared")
    if run_dir is not None:
        print(f"report written to {run_dir}")


def _execute(cfg, out):
    run_dir = Path(out) if out else Path(cfg.output_dir) if cfg.output_dir else _default_run_dir(cfg)
    report = run_experiment(cfg, out_dir=str(run_dir))
    _print_summary(report, run_dir)
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_run(args):
    return _execute(ExperimentConfig.load(args.config), args.out)


def cmd_ingest(args):
    cfg = ExperimentConfig.load(args.probe)
    raw = cfg.to_dict()
    raw["kind"] = "ingest_and_probe"
    raw["ingest"] = {**raw.get("ingest", {}), "path": str(args.csv)}
    raw["criteria"] = {}
    for key in ("theory", "learning_rates", "train"):
        raw.pop(key, None)
    return _execute(ExperimentConfig.from_dict(raw), args.out)


def cmd_report(args):
    run_dir = Path(args.run_dir)
    if not (run_dir / "report.json").exists():
        print(f"error: {run_dir} has no report.json", file=sys.stderr)
        return EXIT_INPUT
    report = load_report(run_dir)
    if args.format == "json" and not args.write:
        sys.stdout.write(report.to_json())
    else:
        for paths in emit_report(report, {args.format}, run_dir).values():
            for p in paths:
                print(p)
    return EXIT_OK if report.passed else EXIT_FAILED


def diff_results(expected, actual):
    """Paths whose values differ between two result dicts."""
    a = dict(flatten(expected))
    b = dict(flatten(actual))
    return sorted((k for k in set(a) | set(b) if a.get(k, object()) != b.get(k, object())), key=str)


def cmd_verify(args):
    run_dir = Path(args.run_dir)
    if not (run_dir / "report.json").exists():
        print(f"error: {run_dir} has no report.json", file=sys.stderr)
        return EXIT_INPUT
    stored = load_report(run_dir)
    cfg = ExperimentConfig.from_dict(stored.config)
    replay = run_experiment(cfg, write=False)
    diffs = diff_results(stored.results(), replay.results())
    if diffs:
        print(f"replay differs at {len(diffs)} entries:")
        for path in diffs[:20]:
            print("  " + "/".join(str(p) for p in path))
        return EXIT_MISMATCH
    print("replay reproduces every stored result")
    _print_summary(replay, None)
    return EXIT_OK if replay.passed else EXIT_FAILED


def build_parser():
    parser = argparse.ArgumentParser(prog="advsep", description="Adversarial-noise separability experiments.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out", help=f"run directory (default: ${OUTPUT_ROOT_ENV}/<kind>-<hash>)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ingest", help="probe an externally produced noise CSV")
    p.add_argument("csv")
    p.add_argument("--probe", required=True, help="config supplying probe and seed settings")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("report", help="re-emit a stored report")
    p.add_argument("run_dir")
    p.add_argument("--format", choices=FORMATS, default="json")
    p.add_argument("--write", action="store_true", help="write report.json instead of printing it")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="replay a run and diff its results")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (IngestError, ExperimentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
