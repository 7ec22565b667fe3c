"""Orthonormalized B-spline basis on [0, 1] with equally spaced knots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidBasisError


@dataclass(frozen=True, eq=False)
class BasisSystem:
    M: int
    order: int
    knots: np.ndarray
    ortho_transform: np.ndarray
    gram: np.ndarray
    quad_nodes: np.ndarray
    quad_weights: np.ndarray

    @property
    def degree(self) -> int:
        return self.order - 1

    def raw(self, times) -> np.ndarray:
        """Raw B-splines, shape (M, len(times))."""
        return cox_de_boor(self.knots, self.order, _check_times(times))

    def __call__(self, times) -> np.ndarray:
        return evaluate_design(self, times)


def make_knots(M: int, order: int) -> np.ndarray:
    n_interior = M - order
    interior = np.arange(1, n_interior + 1) / (n_interior + 1)
    return np.concatenate([np.zeros(order), interior, np.ones(order)])


def gauss_legendre_composite(breaks: np.ndarray, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule with ``n_nodes`` points on every interval of ``breaks``."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
    weights = 0.5 * (b - a) * w[None, :]
    return nodes.ravel(), weights.ravel()


def cox_de_boor(knots: np.ndarray, order: int, times: np.ndarray) -> np.ndarray:
    """All B-splines of the given order at ``times`` by the Cox-de Boor recursion.

    The last nonempty knot interval is closed on the right so that the basis
    is a partition of unity on the whole of [knots[0], knots[-1]].
    """
    knots = np.asarray(knots, dtype=float)
    t = np.asarray(times, dtype=float)
    n_funcs = len(knots) - order
    lo, hi = knots[:-1], knots[1:]
    # order-1 splines: interval indicators
    B = ((t[None, :] >= lo[:, None]) & (t[None, :] < hi[:, None])).astype(float)
    last = np.nonzero(hi > lo)[0][-1]
    B[last, t == knots[-1]] = 1.0
    for k in range(2, order + 1):
        n = len(knots) - k
        left_den = knots[k - 1:k - 1 + n] - knots[:n]
        right_den = knots[k:k + n] - knots[1:1 + n]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den[:, None] > 0,
                            (t[None, :] - knots[:n, None]) / left_den[:, None], 0.0)
            right = np.where(right_den[:, None] > 0,
                             (knots[k:k + n, None] - t[None, :]) / right_den[:, None], 0.0)
        B = left * B[:n] + right * B[1:n + 1]
    return B[:n_funcs]


def build_basis(M: int, order: int = 4) -> BasisSystem:
    """Cubic (by default) B-splines on equally spaced knots, orthonormalized in L2[0, 1]."""
    if order < 2:
        raise InvalidBasisError(f"order must be >= 2, got {order}")
    if M < order:
        raise InvalidBasisError(f"need M >= order, got M={M}, order={order}")
    knots = make_knots(M, order)
    breaks = np.unique(knots)
    nodes, weights = gauss_legendre_composite(breaks, order + 1)
    raw = cox_de_boor(knots, order, nodes)
    gram = (raw * weights) @ raw.T
    L = np.linalg.cholesky(gram)
    ortho = np.linalg.solve(L, np.eye(M))
    return BasisSystem(M=M, order=order, knots=knots, ortho_transform=ortho, gram=gram,
                       quad_nodes=nodes, quad_weights=weights)


def _check_times(times) -> np.ndarray:
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.ndim != 1:
        raise DomainError("times must be one-dimensional")
    if t.size and (not np.all(np.isfinite(t)) or t.min() < 0.0 or t.max() > 1.0):
        raise DomainError("times must lie in [0, 1]")
    return t


def evaluate_design(basis: BasisSystem, times) -> np.ndarray:
    """Orthonormal basis evaluated at ``times``: an M x m matrix."""
    t = _check_times(times)
    return basis.ortho_transform @ cox_de_boor(basis.knots, basis.order, t)
