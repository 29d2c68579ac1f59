"""Command-line entry point.

``enlab run <experiment> --config cfg.json [--seed N] [--paths N] [--out DIR]``
runs one experiment and exits 0 when every check passes, 1 on a check
failure and 2 on usage or parameter errors.  ``enlab list`` enumerates the
available experiments.  ENLAB_THREADS caps path-level parallelism.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import DEFAULT_N_PATHS, EXPERIMENTS, ExperimentConfig, UsageError, run
from .paths import ParameterError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enlab",
        description="Structure-condition experiments for jump markets under "
        "progressive filtration enlargement",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("experiment", choices=sorted(EXPERIMENTS))
    p_run.add_argument("--config", help="JSON config file; flags override fields")
    p_run.add_argument("--seed", type=int, help="root seed")
    p_run.add_argument("--paths", type=int, help="number of paths (or trees)")
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--threads", type=int, help="worker threads")
    p_run.add_argument("--csv-paths", type=int, dest="csv_paths",
                       help="how many sample paths to export as CSV")

    sub.add_parser("list", help="list experiments")
    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_json_file(args.config)
        if cfg.experiment != args.experiment:
            cfg = ExperimentConfig.from_mapping(
                {**_cfg_dict(cfg), "experiment": args.experiment}
            )
    else:
        cfg = ExperimentConfig(experiment=args.experiment)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.paths is not None:
        updates["n_paths"] = args.paths
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.threads is not None:
        updates["threads"] = args.threads
    if args.csv_paths is not None:
        updates["csv_paths"] = args.csv_paths
    if updates:
        cfg = ExperimentConfig.from_mapping({**_cfg_dict(cfg), **updates})
    return cfg


def _cfg_dict(cfg: ExperimentConfig) -> dict:
    from dataclasses import asdict

    data = asdict(cfg)
    data["lambda"] = data.pop("lam")
    return {k: v for k, v in data.items() if v is not None}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "list":
        for name in sorted(EXPERIMENTS):
            print(f"{name:24s} default paths: {DEFAULT_N_PATHS[name]}")
        return 0
    try:
        cfg = _config_from_args(args)
        report = run(cfg)
    except (UsageError, ParameterError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for chk in report.checks:
        mark = "PASS" if chk.passed else "FAIL"
        print(f"[{mark}] {report.experiment}: {chk.name} = {chk.value:.6g} "
              f"(tol {chk.tolerance:g}) {chk.note}")
    print(f"report: {cfg.out_dir}/report.json")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
