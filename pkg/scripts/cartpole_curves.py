"""Cart-pole learning curves for several objectives and seeds.

Each (objective, seed) run lands in its own run directory under ``--out``;
a long-format CSV with one row per evaluation is written next to them.

    python scripts/cartpole_curves.py --objectives clip adbar --seeds 0 1 2
"""
import argparse
import csv
import math
from pathlib import Path

from ppob.config import preset
from ppob.runs import run_training


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--objectives", nargs="+", default=["clip", "adbar"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--preset", default="cartpole-fast")
    ap.add_argument("--out", type=Path, default=Path("results/cartpole"))
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind in args.objectives:
        for seed in args.seeds:
            cfg = preset(args.preset, kind, seed=seed)
            _, m = run_training(cfg, args.out / f"{kind}_{seed}", force=args.force)
            for r in m.rows:
                if not math.isnan(r.eval_return):
                    rows.append((kind, seed, r.steps, r.eval_return))
            print(f"{kind} seed {seed}: final eval {m.rows[-1].eval_return:g}")
    with open(args.out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["objective", "seed", "steps", "eval_return"])
        w.writerows(rows)
    print(f"wrote {args.out / 'curves.csv'}")


if __name__ == "__main__":
    main()
