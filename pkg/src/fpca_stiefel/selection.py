"""Approximate leave-one-curve-out CV, (M, r) grid search, and FEV rank pruning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import SparseDataset
from .errors import DimensionError, EmptyError, FpcaError, NoModelError, PreconditionError
from .initializer import center, estimate_mean, initial_params
from .likelihood import as_batch, evaluate, make_caches
from .optimizer import FitOptions, FitReport, fit
from .parallel import ordered_map
from .splines import build_basis
from .stiefel import NewtonSystem, canonical_inner_raw, riemannian_hessian_form

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CvBreakdown:
    in_sample: float
    first_order_tz: float
    first_order_B: float
    second_order_tz: float
    second_order_B: float

    @property
    def total(self) -> float:
        return (self.in_sample + self.first_order_tz + self.first_order_B
                + self.second_order_tz + self.second_order_B)

    def to_json(self) -> dict:
        return {
            "in_sample": self.in_sample,
            "first_order_tz": self.first_order_tz,
            "first_order_B": self.first_order_B,
            "second_order_tz": self.second_order_tz,
            "second_order_B": self.second_order_B,
            "total": self.total,
        }


def approx_cv(report: FitReport, data) -> CvBreakdown:
    """Second-order approximation of the leave-one-curve-out CV score.

    Removing curve i moves the estimate by roughly ``H^{-1} grad l_i``;
    expanding ``l_i`` to second order around the full-data estimate gives

        sum_i l_i + g_i^T H^{-1} g_i + 3/2 (H^{-1} g_i)^T (d^2 l_i) (H^{-1} g_i)

    for each parameter block, with the cross-block Hessian ignored. For B the
    inner products are canonical and ``H^{-1}`` is the Riemannian Newton solve.
    A single likelihood evaluation at the fitted parameters supplies
    everything.
    """
    if not report.converged:
        raise PreconditionError("approximate CV needs a converged fit (zero gradient)")
    batch = as_batch(data)
    r = report.r
    if batch.n < r + 2:
        raise PreconditionError(f"approximate CV needs n >= r + 2 = {r + 2}, got n = {batch.n}")
    params = report.params
    B = params.B.values
    ev = evaluate(params, batch)

    # (tau, zeta) block
    g_tz = ev.grad_tz  # (n, r+1)
    U = np.linalg.solve(ev.hess_tz_total, g_tz.T).T  # rows H^{-1} g_i
    first_tz = float(np.sum(g_tz * U))
    second_tz = 1.5 * float(np.einsum("ni,nij,nj->", U, ev.hess_tz, U))

    # B block
    system = NewtonSystem(params.B, ev.grad_B_total, ev.hess_B_apply)
    F_i = ev.grad_B  # (n, M, r) Euclidean per-subject gradients
    G_i = F_i - B @ np.swapaxes(F_i, -1, -2) @ B
    V = np.stack([system.solve(G).values for G in G_i])
    first_B = float(sum(canonical_inner_raw(B, G, Vi) for G, Vi in zip(G_i, V)))
    H_iV = ev.hess_euclid(V)  # per-subject H_i(V_i)
    euclid = np.einsum("nij,nij->n", H_iV, V)
    second_B = 1.5 * float(sum(riemannian_hessian_form(B, F, e, Vi, Vi)
                               for F, e, Vi in zip(F_i, euclid, V)))
    return CvBreakdown(float(ev.value), first_tz, first_B, second_tz, second_B)


def fev_prune(eigenvalues, kappa: float) -> int:
    """Smallest r such that the leading r eigenvalues explain at least ``kappa`` of the total."""
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size == 0:
        raise EmptyError("no eigenvalues to prune")
    if not 0.0 <= kappa <= 1.0:
        raise ValueError("kappa must lie in [0, 1]")
    if np.any(lam <= 0) or np.any(np.diff(lam) > 0):
        raise ValueError("eigenvalues must be positive and non-increasing")
    ratio = np.cumsum(lam) / lam.sum()
    # rounding can leave the last ratio a hair below 1
    ratio[-1] = 1.0
    return int(np.argmax(ratio >= kappa)) + 1


@dataclass
class GridCell:
    M: int
    r: int
    report: FitReport | None
    cv: CvBreakdown | None
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return self.cv is not None


@dataclass
class SelectionResult:
    grid: list[GridCell]
    chosen: tuple[int, int]
    fev_pruned_r: dict[float, int] = field(default_factory=dict)

    def cell(self, M: int, r: int) -> GridCell:
        for c in self.grid:
            if (c.M, c.r) == (M, r):
                return c
        raise KeyError((M, r))

    @property
    def best(self) -> GridCell:
        return self.cell(*self.chosen)


def _fit_cell(job) -> GridCell:
    M, r, data, mean, opts = job
    try:
        basis = build_basis(M)
        batch = as_batch(make_caches(basis, data.times, center(data, mean)))
        init = initial_params(data, basis, r, mean=mean)
        report = fit(batch, M, r, init, opts)
    except FpcaError as exc:
        return GridCell(M, r, None, None, f"{type(exc).__name__}: {exc}")
    if not report.converged:
        return GridCell(M, r, report, None, report.failure_reason)
    try:
        cv = approx_cv(report, batch)
    except FpcaError as exc:
        return GridCell(M, r, report, None, f"{type(exc).__name__}: {exc}")
    return GridCell(M, r, report, cv)


def choose(cells: list[GridCell]) -> tuple[int, int]:
    """Minimum CV total among scored cells; ties go to smaller M, then smaller r."""
    scored = [c for c in cells if c.ok]
    if not scored:
        raise NoModelError("no (M, r) cell produced a converged fit with a CV score")
    best = min(scored, key=lambda c: (c.cv.total, c.M, c.r))
    return best.M, best.r


def select_model(data: SparseDataset, M_grid, r_grid, opts: FitOptions | None = None,
                 kappas=(), mean=None, workers: int | None = None) -> SelectionResult:
    """Fit every (M, r) cell with r <= M and pick the approximate-CV minimizer."""
    M_grid = sorted(set(int(m) for m in M_grid))
    r_grid = sorted(set(int(r) for r in r_grid))
    if not M_grid or not r_grid:
        raise EmptyError("M and r grids must be nonempty")
    if min(r_grid) < 1:
        raise DimensionError("r must be >= 1")
    opts = opts or FitOptions()
    if mean is None:
        mean = estimate_mean(data)
    jobs = [(M, r, data, mean, opts) for M in M_grid for r in r_grid if r <= M]
    if not jobs:
        raise NoModelError("every grid cell has r > M")
    cells = ordered_map(_fit_cell, jobs, workers)
    for c in cells:
        if not c.ok:
            log.info("cell M=%d r=%d failed: %s", c.M, c.r, c.failure)
    chosen = choose(cells)
    result = SelectionResult(cells, chosen)
    lam = result.best.report.params.eigenvalues
    result.fev_pruned_r = {float(k): fev_prune(lam, k) for k in kappas}
    return result
