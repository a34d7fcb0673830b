"""Command line entry point: ``fpo run|aggregate|plot|validate``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness


def _cmd_run(args):
    cfg = harness.load_config(args.config)
    if args.seeds:
        cfg.seeds = tuple(args.seeds)
        harness.validate_config(cfg)
    out = harness.run(cfg)
    print(out)


def _cmd_aggregate(args):
    summary = harness.aggregate(args.run_dirs)
    out = Path(args.output)
    harness.write_summary(summary, out)
    for label, e in summary["methods"].items():
        print(f"{label:24s} Q1={e['q1']:10.1f} median={e['median']:10.1f} Q3={e['q3']:10.1f}"
              f"  (n={len(e['final_J'])})")
    print(out)


def _cmd_plot(args):
    with open(args.summary) as fh:
        summary = json.load(fh)
    out_dir = args.output or Path(args.summary).parent
    for p in harness.plot(summary, out_dir):
        print(p)


def _cmd_validate(args):
    cfg = harness.load_config(args.config)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


def build_parser():
    parser = argparse.ArgumentParser(prog="fpo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train every seed of a TOML experiment config")
    p.add_argument("config")
    p.add_argument("--seeds", type=int, nargs="+", help="override the config's seed list")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("aggregate", help="quartiles and median curves over run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("-o", "--output", default="summary.json")
    p.set_defaults(func=_cmd_aggregate)

    p = sub.add_parser("plot", help="SVG learning curves and psi schedule from a summary")
    p.add_argument("summary")
    p.add_argument("-o", "--output", help="output directory (default: next to the summary)")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("validate", help="check a config and print it fully resolved")
    p.add_argument("config")
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (harness.ConfigError, ValueError, FileNotFoundError, FloatingPointError,
            ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
