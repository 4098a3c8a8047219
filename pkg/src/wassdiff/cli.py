"""Command-line entry point: wassdiff <study> --config path.json [overrides]."""

from __future__ import annotations

import argparse
import os
import sys

from .studies import STUDIES, ConfigError, load_config, run_study


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wassdiff",
        description="Verification studies for diffusion-model samplers with closed-form scores.",
    )
    parser.add_argument("study", choices=sorted(STUDIES), help="study suite to run")
    parser.add_argument(
        "--config",
        default=None,
        help="JSON config file; defaults are used when omitted (seed still required via --seed)",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--threads", type=int, default=None, help="data-parallel worker count")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"study": args.study, "seed": args.seed, "out": args.out, "threads": args.threads}
    if args.config and not os.path.exists(args.config):
        print(f"wassdiff: configuration error: config file {args.config!r} not found", file=sys.stderr)
        return 1
    try:
        cfg = load_config(args.config if args.config else {}, overrides)
    except (ConfigError, OSError) as err:
        print(f"wassdiff: configuration error: {err}", file=sys.stderr)
        return 1
    try:
        code = run_study(cfg)
    except Exception as err:  # runtime failure distinct from a failed check
        print(f"wassdiff: runtime error: {err}", file=sys.stderr)
        return 1
    failed = "all checks passed" if code == 0 else "at least one check failed"
    print(f"wassdiff {cfg.study}: {failed}; outputs in {cfg.out_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
