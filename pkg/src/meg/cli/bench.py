"""``meg-bench``: timed encryption/decryption trials on localhost."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..bench import render_report, run_benchmark
from ..errors import MegError
from . import add_verbose, fail, setup_logging


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meg-bench", description="MEG end-to-end latency benchmark")
    parser.add_argument("--n", type=int, default=20, help="trials per task kind")
    parser.add_argument("--len", dest="length", type=int, default=300, help="preset email length in characters")
    parser.add_argument("--format", choices=("table", "json"), default="table")
    parser.add_argument("--out", help="write the report here (and a box plot next to it)")
    parser.add_argument("--figure", help="box plot path (default: <out stem>.png)")
    parser.add_argument("--poll-interval", type=float, default=0.1, help="client poll interval in seconds")
    add_verbose(parser)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        report = run_benchmark(args.n, args.length, poll_interval=args.poll_interval)
        text = render_report(report, args.format)
    except MegError as exc:
        return fail(exc)

    figure = Path(args.figure) if args.figure else None
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        print(f"report written to {out}", file=sys.stderr)
        figure = figure or out.with_suffix(".png")
    else:
        sys.stdout.write(text)
    if figure is not None:
        from ..plotting import plot_report

        plot_report(report, figure)
        print(f"figure written to {figure}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
