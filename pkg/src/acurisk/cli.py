"""Command-line entry point: ``acurisk <subcommand> --config run.json``.

Exit codes: 0 success, 2 validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from typing import Sequence

from .cohort import CohortError
from .pipeline import ConfigError, Pipeline, RunConfig, StageError

SUBCOMMANDS = ("generate", "prep", "train", "eval", "dca", "km", "fairness", "report", "run")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


def _seed_override(text: str) -> tuple[str, int]:
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected name=int, got {text!r}")
    try:
        return name.strip(), int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed value must be an integer: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON); defaults apply when omitted")
    common.add_argument("--seed-override", action="append", default=[], type=_seed_override,
                        metavar="NAME=INT", help="override one named seed (repeatable)")
    common.add_argument("--svg", action="store_true", help="render curve tables as SVG charts")
    common.add_argument("--jobs", type=int, default=1, help="parallel training tasks")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress progress messages")

    parser = argparse.ArgumentParser(prog="acurisk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True
    sub.add_parser("generate", parents=[common], help="write a synthetic cohort")
    sub.add_parser("prep", parents=[common], help="note selection, preprocessing, vocabulary, TF-IDF")
    p = sub.add_parser("train", parents=[common], help="fit models on the train split")
    p.add_argument("--model", action="append", help="restrict to one model (repeatable)")
    p.add_argument("--horizon", action="append", type=int, help="restrict to one horizon (repeatable)")
    sub.add_parser("eval", parents=[common], help="bootstrap metrics and calibration")
    sub.add_parser("dca", parents=[common], help="decision curves")
    sub.add_parser("km", parents=[common], help="risk tertiles, Kaplan-Meier and log-rank")
    p = sub.add_parser("fairness", parents=[common], help="subgroup ECDFs of risk percentiles")
    p.add_argument("--by", help="comma-separated attributes, e.g. race,insurance,cancer_stage")
    sub.add_parser("report", parents=[common], help="collate outputs into report.md")
    sub.add_parser("run", parents=[common], help="all stages in order")
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for name, value in args.seed_override:
        cfg = cfg.with_seed(name, value)
    cfg.validate()
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION

    def log(msg: str) -> None:
        if not args.quiet:
            print(msg, file=sys.stderr, flush=True)

    try:
        cfg = _load_config(args)
        pipe = Pipeline(cfg, config_path=args.config, jobs=args.jobs, svg=args.svg, log=log)
        with warnings.catch_warnings():
            if args.quiet:
                warnings.simplefilter("ignore")
            from filelock import Timeout

            try:
                with pipe.lock():
                    if args.command not in ("generate", "run"):
                        pipe.check_inputs()
                    if args.command == "run":
                        pipe.run()
                    elif args.command == "train":
                        pipe.run_stage("train", models=args.model, horizons=args.horizon)
                    elif args.command == "fairness":
                        by = [b.strip() for b in args.by.split(",") if b.strip()] if args.by else None
                        pipe.run_stage("fairness", by=by)
                    else:
                        pipe.run_stage(args.command)
            except Timeout:
                print(f"error: output directory {cfg.output_dir} is locked by another process",
                      file=sys.stderr)
                return EXIT_RUNTIME
    except (ConfigError, CohortError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
