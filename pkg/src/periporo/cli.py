"""Batch entry point: ``periporo run <config> [--out DIR] [--snapshot-every N] [--threads N] [--scale F]``.

Exit codes: 0 success, 2 configuration error, 3 solver failure.  The
``PERIPORO_OUTPUT_DIR`` environment variable overrides the output directory
(and nothing else).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, apply_scale, load_config
from .scenarios import run_scenario

OUTPUT_ENV = "PERIPORO_OUTPUT_DIR"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="periporo")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario configuration")
    run.add_argument("config")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--snapshot-every", type=int, default=None)
    run.add_argument("--threads", type=int, default=None)
    run.add_argument("--scale", type=float, default=1.0, help="coarsen d and dt by this factor")
    run.add_argument("--max-steps", type=int, default=None, help=argparse.SUPPRESS)
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = apply_scale(load_config(args.config), args.scale)
        if args.snapshot_every is not None and args.snapshot_every < 0:
            raise ConfigError(["--snapshot-every must be non-negative"])
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    out_dir = os.environ.get(OUTPUT_ENV) or args.out or config["output"]["directory"]

    def go():
        return run_scenario(config, out_dir, args.snapshot_every, max_steps=args.max_steps)

    try:
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                result = go()
        else:
            result = go()
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ValueError) else 3
    if result.failed is not None:
        print(f"solver failure at step {result.failed.step}: {result.failed}", file=sys.stderr)
        for line in result.failed.history:
            print(f"  {line}", file=sys.stderr)
        return 3
    print(f"completed {len(result.rows)} steps; output in {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
