"""Command line for rendering report figures from finished runs."""

from __future__ import annotations

import argparse
import sys

from .plotting import (
    QUANTITIES,
    ReportError,
    ReportSpec,
    plot_droplet_overlay,
    plot_panels,
    plot_timeseries,
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="axiflow-report", description="render figures from axiflow run outputs"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    plot_p = sub.add_parser("plot", help="render PNG+SVG figures")
    plot_p.add_argument("--runs", nargs="+", required=True, metavar="DIR")
    plot_p.add_argument(
        "--quantity",
        default="panels",
        help="one of %s, 'panels' for the six-panel figure, "
        "or 'droplet' for the overlay" % (", ".join(QUANTITIES),),
    )
    plot_p.add_argument("--out", required=True, metavar="DIR")
    plot_p.set_defaults(func=cmd_plot)
    return parser


def cmd_plot(args):
    try:
        spec = ReportSpec(args.runs, args.out)
        if args.quantity == "panels":
            paths = plot_panels(spec.run_dirs, spec.out_dir)
        elif args.quantity == "droplet":
            if len(spec.run_dirs) != 1:
                print("error: the droplet overlay takes exactly one run", file=sys.stderr)
                return 2
            paths = plot_droplet_overlay(spec.run_dirs[0], spec.out_dir)
        else:
            paths = plot_timeseries(spec.run_dirs, args.quantity, spec.out_dir)
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
