"""Command-line front end: validate, run, report.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
arguments.  All diagnostics go to stderr; `report` prints JSON on stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_config
from .errors import ConfigError, IngestError, StageDependencyError
from .pipeline import STAGES, build_report, run, validate

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run configuration (TOML)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enso-outages",
        description="Batch analysis of ENSO state, extreme weather, and outage counts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a config and its inputs")
    _add_common(p_validate)

    p_run = sub.add_parser("run", help="execute pipeline stages")
    _add_common(p_run)
    p_run.add_argument(
        "--stage",
        default="all",
        choices=list(STAGES) + ["all"],
        help="stage to run (default: all)",
    )
    p_run.add_argument("--seed", type=int, default=None, help="override run.seed")
    p_run.add_argument("--out", default=None, help="override run.out_dir")
    p_run.add_argument("--alpha", type=float, default=None, help="override analysis.alpha")
    p_run.add_argument("--jobs", type=int, default=None, help="override run.jobs")

    p_report = sub.add_parser("report", help="summarize artifacts as JSON")
    p_report.add_argument("--config", default=None, help="config whose out_dir to summarize")
    p_report.add_argument("--out", default=None, help="artifact directory (overrides config)")
    return parser


def _load(args: argparse.Namespace):
    cfg = load_config(args.config)
    return cfg.with_overrides(
        seed=getattr(args, "seed", None),
        out_dir=getattr(args, "out", None),
        alpha=getattr(args, "alpha", None),
        jobs=getattr(args, "jobs", None),
    )


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = _load(args)
            issues = validate(cfg)
            for issue in issues:
                print(str(issue), file=sys.stderr)
            fatal = any(i.fatal for i in issues)
            if not issues:
                print("configuration ok", file=sys.stderr)
            return EXIT_INVALID if fatal else EXIT_OK

        if args.command == "run":
            cfg = _load(args)
            issues = validate(cfg)
            for issue in issues:
                print(str(issue), file=sys.stderr)
            if any(i.fatal for i in issues):
                return EXIT_INVALID
            manifest = run(cfg, stage=args.stage)
            print(f"wrote {manifest}", file=sys.stderr)
            return EXIT_OK

        if args.command == "report":
            if args.out is None and args.config is None:
                print("report needs --out or --config", file=sys.stderr)
                return EXIT_INVALID
            out_dir = args.out
            if out_dir is None:
                out_dir = load_config(args.config).out_dir
            print(json.dumps(build_report(out_dir), indent=2, sort_keys=True))
            return EXIT_OK

        raise AssertionError(f"unhandled command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (StageDependencyError, IngestError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
