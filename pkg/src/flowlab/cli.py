"""Command-line driver.

One subcommand per experiment plus ``suite``.  Each experiment subcommand
takes a config file (strict key=value format) and optional overrides;
``suite`` takes a manifest listing one config path per line.

Output root resolution order: --out flag, ``out`` config key, the
FLOWLAB_OUT environment variable, then ./runs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from flowlab.config import (EXPERIMENTS, ConfigError, ExperimentConfig,
                            load_config, parse_config_text)
from flowlab.experiments import run_experiment, run_suite


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="config file (key=value lines)")
    p.add_argument("--out", type=Path, default=None,
                   help="output root directory")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads (suite only)")
    p.add_argument("--strict", action="store_true",
                   help="exit nonzero when the verdict fails")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowlab",
        description="numerical studies of heat flow, Yang-Mills flow, and "
                    "reflecting diffusion on model manifolds with boundary")
    sub = parser.add_subparsers(dest="command", required=True)
    for exp in EXPERIMENTS:
        _add_common(sub.add_parser(exp, help=f"run the {exp} experiment"))
    sp = sub.add_parser("suite", help="run a manifest of experiments")
    sp.add_argument("manifest", type=Path,
                    help="file listing one config path per line")
    _add_common(sp)
    return parser


def _load(args, experiment: str) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
        if cfg.experiment != experiment:
            raise ConfigError(
                f"{args.config}: config is for {cfg.experiment!r}, "
                f"invoked as {experiment!r}")
    else:
        cfg = parse_config_text(f"experiment = {experiment}\n",
                                source="<defaults>")
    if args.seed is not None:
        cfg = ExperimentConfig(cfg.experiment,
                               dict(cfg.values, seed=args.seed))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "suite":
            paths = [line.strip() for line in
                     args.manifest.read_text().splitlines()
                     if line.strip() and not line.strip().startswith("#")]
            base = args.manifest.parent
            configs = [load_config(p if Path(p).is_absolute()
                                   else base / p) for p in paths]
            summary = run_suite(configs, out=args.out,
                                threads=args.threads)
            for row in summary["claims"]:
                mark = "PASS" if row["passed"] else "FAIL"
                print(f"{mark}  {row['experiment']:<14} {row['claim']}")
            print(f"{summary['n_experiments']} experiments, "
                  f"all_passed={summary['all_passed']}")
            return 0 if summary["all_passed"] or not args.strict else 1
        cfg = _load(args, args.command)
        verdict = run_experiment(cfg, out=args.out)
        mark = "PASS" if verdict["passed"] else "FAIL"
        print(f"{mark}  {verdict['experiment']}  "
              f"claim={verdict['claim']}")
        return 0 if verdict["passed"] or not args.strict else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
