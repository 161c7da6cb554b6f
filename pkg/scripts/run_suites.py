"""Run the built-in experiment suites and print a one-line summary per suite.

    python3 scripts/run_suites.py --out runs/suites
"""

import argparse
import json
import time
from pathlib import Path

from upt.runner import SUITES, run_experiment_suite


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--suites", default=",".join(SUITES))
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", default="runs/suites")
    args = ap.parse_args()

    for name in args.suites.split(","):
        t0 = time.perf_counter()
        report = run_experiment_suite(name, range(args.seeds), out_dir=Path(args.out) / name)
        s = report["summary"]
        print(f"{name:9s} {'pass' if report['passed'] else 'FAIL'}  "
              f"expected {s['expected_initial']:.3f} -> {s['expected_final']:.3f}  "
              f"greedy {s['greedy_initial']:.3f} -> {s['greedy_final']:.3f}  "
              f"reward up {s['seeds_reward_up']}/{args.seeds}  entropy down {s['seeds_entropy_down']}/{args.seeds}  "
              f"({time.perf_counter() - t0:.0f}s)")
        print("  checks:", json.dumps(report["checks"]))


if __name__ == "__main__":
    main()
