"""Desk-scale fixed-model benchmark: easy setting, n=200, M=5, r=3.

Usage: python scripts/benchmark_desk_run.py [--replicates 20] [--seed 0] [--out bench.json]
"""

import argparse
import json
import time

from fpca_stiefel.simulation import make_setting, run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--setting", default="easy")
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    start = time.perf_counter()
    rep = run_benchmark(make_setting(args.setting), args.n, args.replicates, [5], [3], seed=args.seed)
    print(f"converged {rep.converged}/{rep.replicates} in {time.perf_counter() - start:.0f}s")
    print("MISE mean  " + " ".join(f"{v:.4f}" for v in rep.mise_mean))
    print("MISE sd    " + " ".join(f"{v:.4f}" for v in rep.mise_sd))
    print("lambda NMSE " + " ".join(f"{v:.4f}" for v in rep.eigenvalue_nmse))
    print(f"sigma2 NMSE {rep.sigma2_nmse:.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rep.to_json(), fh, indent=2)


if __name__ == "__main__":
    main()
