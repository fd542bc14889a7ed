"""How often each objective leaves the trust region, across step sizes.

A violation is a minibatch sample whose monitored distance reaches delta.
The barrier objectives should stay inside; the penalty and clip objectives
have nothing stopping them.

    python scripts/feasibility.py --lrs 3e-4 1e-2 1e-1
"""
import argparse
import csv
import sys

from ppob.config import preset
from ppob.trainer import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--objectives", nargs="+", default=["clip", "klpen", "klbar", "adbar"])
    ap.add_argument("--lrs", type=float, nargs="+", default=[3e-4, 1e-2, 1e-1])
    ap.add_argument("--iterations", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    w = csv.writer(sys.stdout)
    w.writerow(["objective", "lr", "violation_fraction", "max_mean_ad", "max_mean_kl", "final_eval"])
    for lr in args.lrs:
        for kind in args.objectives:
            cfg = preset("corridor-fast", kind, lr=lr, iterations=args.iterations, seed=args.seed)
            _, m = train(cfg)
            w.writerow([kind, lr, m.violation_fraction, max(m.column("mean_ad")), max(m.column("mean_kl")),
                        m.rows[-1].eval_return])


if __name__ == "__main__":
    main()
