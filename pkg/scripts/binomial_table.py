"""Print P(majority correct) for a grid of per-sample accuracies and vote sizes."""

import argparse

import numpy as np

from upt.metrics import BinomialVoteModel, majority_success_prob


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--inclusive", action="store_true", help="count exact ties as correct")
    ap.add_argument("--n-max", type=int, default=21)
    args = ap.parse_args()

    ps = np.round(np.arange(0.3, 0.951, 0.05), 2)
    ns = range(1, args.n_max + 1, 2) if not args.inclusive else range(1, args.n_max + 1)
    print("n \\ p " + " ".join(f"{p:6.2f}" for p in ps))
    for n in ns:
        row = [majority_success_prob(BinomialVoteModel(n, float(p)), args.inclusive) for p in ps]
        print(f"{n:5d} " + " ".join(f"{v:6.3f}" for v in row))


if __name__ == "__main__":
    main()
