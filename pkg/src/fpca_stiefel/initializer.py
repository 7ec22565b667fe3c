"""Starting values: local linear mean, kernel-smoothed raw covariance, basis projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SparseDataset
from .errors import DimensionError, InsufficientDataError
from .likelihood import ModelParams
from .splines import BasisSystem, evaluate_design
from .stiefel import StiefelPoint

GRID_SIZE = 51
SIGMA2_FLOOR = 1e-4
EIG_REL_FLOOR = 1e-4
EIG_ABS_FLOOR = 1e-8


def _gauss(u: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * u * u)


def local_linear(x: np.ndarray, t: np.ndarray, y: np.ndarray, h: float,
                 weights: np.ndarray | None = None) -> np.ndarray:
    """Gaussian-kernel local linear fit of (t, y) evaluated at ``x``.

    ``weights`` is an optional (len(x), len(t)) mask multiplied into the kernel.
    """
    d = t[None, :] - x[:, None]
    K = _gauss(d / h)
    if weights is not None:
        K = K * weights
    s0 = K.sum(1)
    s1 = (K * d).sum(1)
    s2 = (K * d * d).sum(1)
    t0 = K @ y
    t1 = (K * d) @ y
    den = s0 * s2 - s1 * s1
    ok = den > 1e-12 * np.maximum(s0 * s2, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = (s2 * t0 - s1 * t1) / den
        nw = t0 / s0
    return np.where(ok, ll, nw)


@dataclass(frozen=True, eq=False)
class MeanEstimate:
    grid: np.ndarray
    values: np.ndarray
    bandwidth: float
    t: np.ndarray
    y: np.ndarray

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return local_linear(x, self.t, self.y, self.bandwidth)


def _loso_cv_score(t, y, idx, h) -> float:
    other = (idx[:, None] != idx[None, :]).astype(float)
    pred = local_linear(t, t, y, h, weights=other)
    err = y - pred
    err = err[np.isfinite(err)]
    return float(np.mean(err**2)) if err.size else np.inf


def estimate_mean(data: SparseDataset, bandwidth=None, grid_size: int = GRID_SIZE) -> MeanEstimate:
    """Local linear mean of the pooled observations.

    ``bandwidth`` may be a number, a list of candidates, or None; lists and
    None are resolved by leave-one-subject-out CV, None using 10 geometric
    values between range/20 and range/2.
    """
    t, y, idx = data.pooled()
    if t.size < 10:
        raise InsufficientDataError(f"need at least 10 pooled points, got {t.size}")
    if bandwidth is None or np.ndim(bandwidth) > 0:
        if bandwidth is None:
            span = float(t.max() - t.min()) or 1.0
            candidates = np.geomspace(span / 20, span / 2, 10)
        else:
            candidates = np.asarray(bandwidth, dtype=float)
        scores = [_loso_cv_score(t, y, idx, h) for h in candidates]
        h = float(candidates[int(np.argmin(scores))])
    else:
        h = float(bandwidth)
    grid = np.linspace(0.0, 1.0, grid_size)
    return MeanEstimate(grid, local_linear(grid, t, y, h), h, t, y)


def center(data: SparseDataset, mean) -> list[np.ndarray]:
    return [s.values - mean(s.times) for s in data.subjects]


@dataclass(frozen=True, eq=False)
class CovarianceSurface:
    grid: np.ndarray
    cov: np.ndarray  # (G, G) smoothed off-diagonal covariance
    diag_var: np.ndarray  # (G,) smoothed E[y^2] at t, estimates C(t, t) + sigma^2
    bandwidth: float

    @property
    def size(self) -> int:
        return self.grid.size


def default_surface_bandwidth(n: int, grid_size: int = GRID_SIZE) -> float:
    return 2.0 / (grid_size - 1) * (n / 100.0) ** (-1.0 / 6.0)


def smooth_covariance(times_list, resid_list, bandwidth: float | None = None,
                      grid_size: int = GRID_SIZE) -> CovarianceSurface:
    """Nadaraya-Watson product-kernel smooth of within-subject cross products (j != j')."""
    s_all, t_all, z_all = [], [], []
    for t, e in zip(times_list, resid_list):
        if t.size < 2:
            continue
        jj, kk = np.nonzero(~np.eye(t.size, dtype=bool))
        s_all.append(t[jj])
        t_all.append(t[kk])
        z_all.append(e[jj] * e[kk])
    if not s_all:
        raise InsufficientDataError("no subject has two or more measurements")
    s, tt, z = map(np.concatenate, (s_all, t_all, z_all))
    n = len(times_list)
    h = bandwidth if bandwidth is not None else default_surface_bandwidth(n, grid_size)
    grid = np.linspace(0.0, 1.0, grid_size)
    Ks = _gauss((s[None, :] - grid[:, None]) / h)
    Kt = _gauss((tt[None, :] - grid[:, None]) / h)
    num = (Ks * z) @ Kt.T
    den = Ks @ Kt.T
    cov = num / np.maximum(den, 1e-300)
    cov = 0.5 * (cov + cov.T)

    t1 = np.concatenate(list(times_list))
    e1 = np.concatenate(list(resid_list))
    K1 = _gauss((t1[None, :] - grid[:, None]) / h)
    diag_var = (K1 @ (e1 * e1)) / np.maximum(K1.sum(1), 1e-300)
    return CovarianceSurface(grid, cov, diag_var, float(h))


def simpson_weights(grid: np.ndarray) -> np.ndarray:
    G = grid.size
    if G % 2 == 0:
        raise ValueError("Simpson weights need an odd number of points")
    w = np.ones(G)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (grid[1] - grid[0]) / 3.0


def project_surface(cov: np.ndarray, grid: np.ndarray, basis: BasisSystem) -> np.ndarray:
    """Coefficient matrix K with C(s, t) ~ phi(s)^T K phi(t), by weighted least squares.

    With A the basis on the grid and W the Simpson weights this is
    ``G^{-1} A W C W A^T G^{-1}`` where ``G = A W A^T``; G equals I up to
    quadrature error, and the correction makes surfaces already of the form
    ``A^T S A`` project back to S exactly.
    """
    if cov.shape != (grid.size, grid.size):
        raise DimensionError("surface does not match grid")
    A = evaluate_design(basis, grid)
    W = simpson_weights(grid)
    Gw = (A * W) @ A.T
    K = (A * W) @ cov @ (A * W).T
    K = np.linalg.solve(Gw, np.linalg.solve(Gw, K).T)
    return 0.5 * (K + K.T)


def params_from_surface(surface: CovarianceSurface, basis: BasisSystem, r: int) -> ModelParams:
    if r > basis.M:
        raise DimensionError(f"r={r} exceeds M={basis.M}")
    K = project_surface(surface.cov, surface.grid, basis)
    evals, evecs = np.linalg.eigh(K)
    order = np.argsort(evals)[::-1][:r]
    lam, V = evals[order], evecs[:, order]
    top = max(lam[0], EIG_ABS_FLOOR)
    lam = np.maximum(lam, EIG_REL_FLOOR * top)
    diag_c = np.diag(surface.cov)
    sigma2 = max(SIGMA2_FLOOR, float(np.mean(surface.diag_var - diag_c)))
    return ModelParams(StiefelPoint.from_matrix(V), np.log(lam), np.log(sigma2))


def initial_params(data: SparseDataset, basis: BasisSystem, r: int, mean=None,
                   bandwidth: float | None = None) -> ModelParams:
    """Starting values (B0, zeta0, tau0) for the Newton fit."""
    if r > basis.M:
        raise DimensionError(f"r={r} exceeds M={basis.M}")
    if mean is None:
        mean = estimate_mean(data)
    resid = center(data, mean)
    surface = smooth_covariance(data.times, resid, bandwidth)
    return params_from_surface(surface, basis, r)
