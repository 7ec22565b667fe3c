"""FEV pruning on the hybrid setting.

Prints the pruned rank for the true hybrid eigenvalues and, with --fit, for
eigenvalues estimated from one simulated hybrid dataset at M=10, r=6.
"""

import argparse

from fpca_stiefel.initializer import center, estimate_mean, initial_params
from fpca_stiefel.likelihood import as_batch, make_caches
from fpca_stiefel.optimizer import fit
from fpca_stiefel.selection import fev_prune
from fpca_stiefel.simulation import HYBRID_EIGENVALUES, generate, make_setting
from fpca_stiefel.splines import build_basis


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kappa", type=float, nargs="+", default=[0.9, 0.95, 0.99])
    ap.add_argument("--fit", action="store_true")
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    for k in args.kappa:
        print(f"true eigenvalues, kappa={k}: r={fev_prune(HYBRID_EIGENVALUES, k)}")
    if not args.fit:
        return
    data, _ = generate(make_setting("hybrid"), args.n, args.seed)
    basis = build_basis(10)
    mean = estimate_mean(data)
    batch = as_batch(make_caches(basis, data.times, center(data, mean)))
    rep = fit(batch, 10, 6, initial_params(data, basis, 6, mean=mean))
    print(f"fit converged={rep.converged}, eigenvalues " + " ".join(f"{v:.3g}" for v in rep.params.eigenvalues))
    for k in args.kappa:
        print(f"estimated eigenvalues, kappa={k}: r={fev_prune(rep.params.eigenvalues, k)}")


if __name__ == "__main__":
    main()
