#!/usr/bin/env python3
"""End-to-end experiment: corpus, training, comparison, oracle gap, plots.

Usage:
    python scripts/run_experiment.py --config configs/desk.json [--seed N]
                                     [--output-dir DIR] [--skip-gap]
"""

import argparse
import sys
import time
from pathlib import Path

from bracketlab.cli import main as cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/desk.json")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--output-dir", default=None)
    parser.add_argument("--skip-gap", action="store_true")
    args = parser.parse_args()

    common = ["--config", args.config]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]
    if args.output_dir is not None:
        common += ["--output-dir", args.output_dir]

    t0 = time.time()
    rc = cli(["generate-corpus", *common])
    if rc:
        return rc
    print(f"[corpus done, {time.time() - t0:.0f}s]")

    rc = cli(["train", *common])
    if rc:
        return rc
    print(f"[training done, {time.time() - t0:.0f}s]")

    # The train step writes checkpoints into the config's output directory.
    from bracketlab.config import load_run_config
    cfg = load_run_config(args.config, seed_override=args.seed,
                          output_dir=args.output_dir)
    outdir = Path(cfg.output_dir)
    ckpt = outdir / "checkpoint.npz"
    shutter = outdir / "checkpoint_shutter_only.npz"
    compare_args = ["compare", *common, "--checkpoint", str(ckpt)]
    if shutter.exists():
        compare_args += ["--shutter-checkpoint", str(shutter)]
    rc = cli(compare_args)
    if rc:
        return rc
    print(f"[comparison done, {time.time() - t0:.0f}s]")

    if not args.skip_gap:
        rc = cli(["gap", *common, "--checkpoint", str(ckpt)])
        if rc:
            return rc
        print(f"[oracle gap done, {time.time() - t0:.0f}s]")
    print(f"all outputs under {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
