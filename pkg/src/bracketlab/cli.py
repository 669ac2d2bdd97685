"""Command-line interface.

Subcommands: generate-corpus, train, compare, gap, plot.  Exit codes:
0 success, 1 configuration error, 2 runtime divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_run_config
from .errors import ConfigError, TrainingDivergenceError
from .harness import (emit_plots, run_compare, run_gap, run_generate_corpus,
                      run_train, write_compare_outputs, write_gap_outputs)
from .reporting import read_report_json


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run config JSON path")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the master seed")
    parser.add_argument("--output-dir", default=None,
                        help="override the config's output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bracketlab",
        description="Exposure-bracketing simulator and training harness")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("generate-corpus",
                               help="write scene corpus manifests"))
    _add_common(sub.add_parser("train", help="train the bracketing agent"))

    cmp_p = sub.add_parser("compare", help="evaluate schedulers on the "
                                           "held-out corpus")
    _add_common(cmp_p)
    cmp_p.add_argument("--checkpoint", required=True)
    cmp_p.add_argument("--shutter-checkpoint", default=None)

    gap_p = sub.add_parser("gap", help="oracle-gap study on reduced grids")
    _add_common(gap_p)
    gap_p.add_argument("--checkpoint", required=True)

    plot_p = sub.add_parser("plot", help="re-emit plots from a report")
    plot_p.add_argument("--report", required=True)
    plot_p.add_argument("--output-dir", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "plot":
            report = read_report_json(args.report)
            written = emit_plots(report, Path(args.output_dir))
            for p in written:
                print(p)
            return 0

        cfg = load_run_config(args.config, seed_override=args.seed,
                              output_dir=args.output_dir)
        outdir = Path(cfg.output_dir)
        if args.command == "generate-corpus":
            paths = run_generate_corpus(cfg, outdir)
            for p in paths.values():
                print(p)
        elif args.command == "train":
            paths = run_train(cfg, outdir)
            for key, p in paths.items():
                if isinstance(p, Path):
                    print(p)
        elif args.command == "compare":
            report = run_compare(cfg, args.checkpoint,
                                 shutter_checkpoint_path=args.shutter_checkpoint)
            paths = write_compare_outputs(report, outdir)
            for p in paths.values():
                print(p)
        elif args.command == "gap":
            report = run_gap(cfg, args.checkpoint)
            paths = write_gap_outputs(report, outdir)
            for p in paths.values():
                print(p)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergenceError as exc:
        print(f"runtime divergence: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
