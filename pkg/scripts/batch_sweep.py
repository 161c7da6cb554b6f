"""Sweep tasks-per-step for the improve and degrade suites.

Shows how the step budget interacts with batching: with 300 steps, larger
batches see more groups per step and move expected accuracy further.
"""

import argparse
import dataclasses

import numpy as np

from upt.runner import SUITES, run_suite_seed


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batches", default="1,5,10,25")
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    for name in ("improve", "degrade"):
        for b in map(int, args.batches.split(",")):
            spec = dataclasses.replace(SUITES[name], batch_tasks=b)
            runs = [run_suite_seed(spec, s) for s in range(args.seeds)]
            init = np.mean([r["expected_initial"] for r in runs])
            final = [r["expected_final"] for r in runs]
            print(f"{name:8s} batch {b:3d}: expected {init:.3f} -> {np.mean(final):.3f} "
                  f"(min {min(final):.3f}, max {max(final):.3f})")


if __name__ == "__main__":
    main()
