"""Command-line front end: plotviz --csv ... --out chart.png."""

import argparse
import sys

from .figure import FigureSpec, render
from .reader import SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plotviz",
        description="Render macro-AUROC-vs-ratio charts from figure CSVs")
    parser.add_argument("--csv", action="append", required=True,
                        metavar="PATH",
                        help="input figure CSV; repeat to overlay files")
    parser.add_argument("--out", required=True, metavar="PATH",
                        help="output image path (format from extension)")
    parser.add_argument("--title", default="", help="chart title")
    parser.add_argument("--regime", action="append", default=[],
                        metavar="NAME",
                        help="restrict to this regime; repeatable")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(csv_paths=tuple(args.csv), out_path=args.out,
                      title=args.title, regimes=tuple(args.regime))
    try:
        out = render(spec)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
