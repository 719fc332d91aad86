"""selfmt-plot: static figures from selfmt CSV outputs.

Exit codes: 0 success, 1 usage error, 2 malformed input.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .render import PlotError, plot_dynamics, plot_summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfmt-plot")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dynamics", help="extraction/generation counts per epoch")
    p.add_argument("--in", dest="stats", required=True, help="stats CSV")
    p.add_argument("--baseline", default=None, help="baseline stats CSV (dashed overlay)")
    p.add_argument("--out", required=True, help="output image (.png or .svg)")

    p = sub.add_parser("summary", help="test BLEU per technique with CI whiskers")
    p.add_argument("--in", dest="summary", required=True, help="summary CSV")
    p.add_argument("--out", required=True, help="output image (.png or .svg)")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        if args.command == "dynamics":
            plot_dynamics(args.stats, args.out, baseline_csv=args.baseline)
        else:
            plot_summary(args.summary, args.out)
    except PlotError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
