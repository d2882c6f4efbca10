"""Command-line entry point.

    offnav collect        --out RUN [--config cfg.json] [--seed N]
    offnav train          --out RUN ...
    offnav eval-mse       --out RUN ...
    offnav navigate       --out RUN --method ours ...
    offnav adapt-scenario --out RUN ...
    offnav report         --out RUN ...

All commands share one run directory (--out) and read each other's
artifacts from the fixed layout described in pipeline.py. Without
--config the built-in benchmark scenario is used; --seed overrides the
scenario's master seed. Failures print a JSON error object to stderr and
exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import pipeline
from .scenario import ScenarioConfig, default_scenario


def _load_scenario(args) -> ScenarioConfig:
    sc = (ScenarioConfig.load(args.config) if args.config
          else default_scenario())
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    return sc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="offnav",
        description="uncertainty-aware off-road navigation benchmark")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
            ("collect", "exploration driving on every task; writes logs"),
            ("train", "train baseline, meta, and dynamics models"),
            ("eval-mse", "held-out MSE table"),
            ("navigate", "race-track trials for one method"),
            ("adapt-scenario", "two-lap bump adaptation run"),
            ("report", "assemble final CSV tables and summary")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None,
                       help="scenario JSON (default: built-in benchmark)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario master seed")
        p.add_argument("--out", required=True, help="run directory")
        if name == "navigate":
            p.add_argument("--method", required=True,
                           choices=list(pipeline.METHODS))
        if name == "adapt-scenario":
            p.add_argument("--strict", action="store_true",
                           help="fail if adaptation does not raise the "
                            "predicted bump cost")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = _load_scenario(args)
        if args.command == "collect":
            manifest = pipeline.run_collect(sc, args.out)
            print(json.dumps(manifest, sort_keys=True))
        elif args.command == "train":
            info = pipeline.run_train(sc, args.out)
            print(json.dumps(info, sort_keys=True))
        elif args.command == "eval-mse":
            rows = pipeline.run_eval_mse(sc, args.out)
            print(json.dumps([r.to_dict() for r in rows], sort_keys=True))
        elif args.command == "navigate":
            row = pipeline.run_navigate(sc, args.method, args.out)
            print(json.dumps(row.to_dict(), sort_keys=True))
        elif args.command == "adapt-scenario":
            report = pipeline.run_adaptation_scenario(sc, args.out,
                                                      strict=args.strict)
            print(json.dumps(report, sort_keys=True))
        elif args.command == "report":
            metrics = pipeline.gather_metrics(args.out)
            pipeline.write_report(metrics, os.path.join(args.out, "report"))
            print(json.dumps(metrics.to_dict(), sort_keys=True))
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
