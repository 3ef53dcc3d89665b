#!/usr/bin/env python3
"""Run the covariance and cumulant recovery-time sweeps and print the fitted
exponents (the two single-spike rows of the scaling summary).

Usage: python scripts/run_scaling_sweeps.py [--out OUT] [--seed N] [--threads N] [--full]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from stairslab.cli import load_config  # noqa: E402
from stairslab.experiments import SweepConfig, run_sweep  # noqa: E402

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out/sweeps")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--full", action="store_true",
                    help="include d=48 in the cumulant sweep (slow)")
    args = ap.parse_args()

    jobs = [("covariance", "a4_cov_sweep.json"),
            ("cumulant", "a5_cum_sweep_full.json" if args.full else "a5_cum_sweep.json")]
    for name, cfg_file in jobs:
        cfg = SweepConfig(**{**load_config(str(CONFIGS / cfg_file)),
                             "dims": tuple(load_config(str(CONFIGS / cfg_file))["dims"])})
        out = Path(args.out) / name
        result = run_sweep(cfg, master_seed=args.seed, threads=args.threads, out_dir=out)
        if result.fit:
            print(f"{name}: slope {result.fit.slope:.3f} (r^2 {result.fit.r_squared:.3f}), "
                  f"medians {result.fit.medians} -> {out}")
        else:
            print(f"{name}: fit aborted ({result.fit_error}) -> {out}")


if __name__ == "__main__":
    main()
