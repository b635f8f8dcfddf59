"""Command line entry points: nlslab run / sweep / check."""

from __future__ import annotations

import argparse
import sys

from . import harness


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nlslab",
        description="Pseudospectral NLS soliton laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config")

    p_sweep = sub.add_parser("sweep", help="run a campaign over one config key")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--axis", required=True, help="dotted config key to sweep")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated list of values")
    p_sweep.add_argument("--workers", type=int, default=1)

    sub.add_parser("check", help="run the built-in property battery")

    args = parser.parse_args(argv)
    if args.command == "run":
        return harness.run(args.config)
    if args.command == "sweep":
        raw = args.values.strip()
        values = [harness._parse_scalar(v) for v in raw.split(",")] if raw else []
        return harness.sweep(args.config, args.axis, values, workers=args.workers)
    if args.command == "check":
        return harness.check()
    return 1


if __name__ == "__main__":
    sys.exit(main())
