"""Write P(x; mu) on (1, 2) for several mu and print the minimizers.

    python scripts/barrier_curves.py --out results/barrier.csv
"""
import argparse
from pathlib import Path

from ppob.barrier import default_problem, emit_curves


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mu", type=float, nargs="+", default=[1.0, 0.1, 0.01])
    ap.add_argument("--grid", type=int, default=401)
    ap.add_argument("--out", type=Path, default=Path("results/barrier.csv"))
    args = ap.parse_args()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    for c in emit_curves(default_problem(args.mu[0]), args.mu, args.grid, out=args.out):
        print(f"mu={c.mu:<6g} x(mu)={c.minimizer:.10f} P={c.minimum:.10f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
