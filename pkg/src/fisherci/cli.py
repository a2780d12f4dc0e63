"""Command-line entry point: ``fisherci --experiment table3 --out results/``."""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone

from .config import load_experiment, preset_names, validate
from .errors import FisherCIError
from .montecarlo import ExperimentConfig, run_experiment
from .report import RunManifest, format_table, write_report

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_EXCLUSIONS = 2
MAX_EXCLUSION_RATE = 0.20


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fisherci",
        description="Monte Carlo comparison of observed and expected Fisher information "
                    "for confidence intervals.",
    )
    ap.add_argument("--experiment", required=False,
                    help="preset name (e.g. table1, table5_case2) or path to a TOML config")
    ap.add_argument("--reps", type=int, help="number of replications")
    ap.add_argument("--seed", type=int, help="master seed")
    ap.add_argument("--alpha", type=float, help="per-component significance level")
    ap.add_argument("--n", type=int, help="sample size")
    ap.add_argument("--out", default="results", help="output directory (default: results)")
    ap.add_argument("--threads", type=int, default=1, help="worker processes (default: 1)")
    ap.add_argument("--reliability", type=int,
                    help="outer repeats for the V_n reliability study (0 disables)")
    ap.add_argument("--list", action="store_true", help="list bundled presets and exit")
    ap.add_argument("--quiet", action="store_true", help="do not print the result table")
    return ap


def apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.reps is not None:
        changes["replications"] = args.reps
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    if args.n is not None:
        changes["n"] = args.n
    if not changes:
        return config
    config = replace(config, **changes)
    validate(config)
    return config


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.list:
        print("\n".join(preset_names()))
        return EXIT_OK
    if not args.experiment:
        print("error: --experiment is required", file=sys.stderr)
        return EXIT_ERROR
    try:
        config, reliability = load_experiment(args.experiment)
        config = apply_overrides(config, args)
        if args.reliability is not None:
            reliability = args.reliability
        if reliability == 1 or reliability < 0:
            raise FisherCIError("--reliability must be 0 or at least 2")
        if args.threads < 1:
            raise FisherCIError("--threads must be at least 1")
        started = _now()
        t0 = time.perf_counter()
        report, records = run_experiment(config, workers=args.threads, reliability=reliability)
        wall = time.perf_counter() - t0
        manifest = RunManifest(config, started_at=started, finished_at=_now(),
                               wall_time_seconds=wall, worker_count=args.threads,
                               reliability=reliability)
        write_report(report, manifest, args.out, records)
    except (FisherCIError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if not args.quiet:
        print(format_table(report), end="")
    if report.exclusion_rate > MAX_EXCLUSION_RATE:
        print(f"warning: {report.exclusion_rate:.1%} of replications excluded", file=sys.stderr)
        return EXIT_EXCLUSIONS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
