"""Model selection frequencies over an M grid with approximate CV.

Usage: python scripts/selection_run.py [--M-grid 4,5,6,9] [--r-grid 3] [--replicates 20]
"""

import argparse
import json
import time

from fpca_stiefel.simulation import make_setting, run_benchmark


def _ints(text):
    return [int(v) for v in text.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--setting", default="easy")
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--M-grid", type=_ints, default=[4, 5, 6, 9])
    ap.add_argument("--r-grid", type=_ints, default=[3])
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    start = time.perf_counter()
    rep = run_benchmark(make_setting(args.setting), args.n, args.replicates, args.M_grid, args.r_grid,
                        seed=args.seed)
    print(f"converged {rep.converged}/{rep.replicates} in {time.perf_counter() - start:.0f}s")
    for cell, count in sorted(rep.selection_counts.items()):
        print(f"(M,r)=({cell}): {count}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rep.to_json(), fh, indent=2)


if __name__ == "__main__":
    main()
