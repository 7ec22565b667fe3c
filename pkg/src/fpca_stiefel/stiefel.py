"""Riemannian primitives on the Stiefel manifold under the canonical metric.

The manifold is S(M, r) = {B in R^{M x r} : B^T B = I_r}. Tangent vectors at
B are matrices D with B^T D skew-symmetric. All routines are pure functions;
points and tangent vectors are immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import (
    BaseMismatchError,
    DimensionError,
    NotOnManifoldError,
    NotSkewError,
    SingularSystemError,
)

ORTHO_TOL = 1e-8
REPAIR_TOL = 1e-6
TANGENT_TOL = 1e-8
SKEW_TOL = 1e-10
RCOND_MIN = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _qr_positive(X: np.ndarray) -> np.ndarray:
    """Thin QR with the sign convention diag(R) > 0, so Q stays close to X."""
    Q, R = np.linalg.qr(X)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


@dataclass(frozen=True, eq=False)
class StiefelPoint:
    """An M x r matrix with orthonormal columns.

    Drift up to 1e-6 in ``B^T B - I`` is repaired by a sign-preserving QR;
    anything larger is rejected.
    """

    values: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.values, dtype=float)
        if B.ndim != 2 or B.shape[1] > B.shape[0] or B.shape[1] == 0:
            raise DimensionError(f"expected an M x r matrix with 1 <= r <= M, got {B.shape}")
        if not np.all(np.isfinite(B)):
            raise NotOnManifoldError("non-finite entries")
        err = _ortho_error(B)
        if err > REPAIR_TOL:
            raise NotOnManifoldError(f"||B^T B - I||_max = {err:.3g} exceeds {REPAIR_TOL}")
        if err > ORTHO_TOL * 1e-2:
            B = _qr_positive(B)
        object.__setattr__(self, "values", _frozen(B))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def r(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_matrix(cls, X: np.ndarray) -> "StiefelPoint":
        """Orthonormalize an arbitrary full-column-rank matrix and wrap it."""
        return cls(_qr_positive(np.asarray(X, dtype=float)))

    @classmethod
    def standard(cls, M: int, r: int) -> "StiefelPoint":
        return cls(np.eye(M)[:, :r])

    @classmethod
    def random(cls, M: int, r: int, rng: np.random.Generator) -> "StiefelPoint":
        return cls.from_matrix(rng.standard_normal((M, r)))


def _ortho_error(B: np.ndarray) -> float:
    return float(np.max(np.abs(B.T @ B - np.eye(B.shape[1]))))


@dataclass(frozen=True, eq=False)
class TangentVector:
    values: np.ndarray
    base: StiefelPoint = field(repr=False)

    def __post_init__(self):
        D = np.asarray(self.values, dtype=float)
        if D.shape != self.base.shape:
            raise DimensionError(f"tangent shape {D.shape} != base shape {self.base.shape}")
        BtD = self.base.values.T @ D
        scale = max(1.0, float(np.max(np.abs(D), initial=0.0)))
        if np.max(np.abs(BtD + BtD.T), initial=0.0) > TANGENT_TOL * scale:
            raise NotSkewError("B^T D is not skew-symmetric; not a tangent vector")
        object.__setattr__(self, "values", _frozen(D))

    def __add__(self, other: "TangentVector") -> "TangentVector":
        _check_base(self.base, other)
        return TangentVector(self.values + other.values, self.base)

    def __mul__(self, c: float) -> "TangentVector":
        return TangentVector(c * self.values, self.base)

    __rmul__ = __mul__

    def __neg__(self) -> "TangentVector":
        return TangentVector(-self.values, self.base)


def as_point(B) -> StiefelPoint:
    return B if isinstance(B, StiefelPoint) else StiefelPoint(B)


def _check_base(B: StiefelPoint, D: TangentVector) -> None:
    if D.base is B:
        return
    if D.base.shape != B.shape or not np.array_equal(D.base.values, B.values):
        raise BaseMismatchError("tangent vector is attached to a different base point")


def skew(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X - X.T)


def sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


def project_to_tangent(B, G_euclid: np.ndarray) -> TangentVector:
    """Intrinsic gradient under the canonical metric: ``G - B G^T B``."""
    B = as_point(B)
    G_euclid = np.asarray(G_euclid, dtype=float)
    if G_euclid.shape != B.shape:
        raise DimensionError(f"gradient shape {G_euclid.shape} != {B.shape}")
    Bv = B.values
    return TangentVector(G_euclid - Bv @ G_euclid.T @ Bv, B)


def canonical_inner(B, D1: TangentVector, D2: TangentVector) -> float:
    """``Tr(D1^T (I - B B^T / 2) D2)``."""
    B = as_point(B)
    _check_base(B, D1)
    _check_base(B, D2)
    return canonical_inner_raw(B.values, D1.values, D2.values)


def canonical_inner_raw(B: np.ndarray, D1: np.ndarray, D2: np.ndarray) -> float:
    return float(np.sum(D1 * D2) - 0.5 * np.sum((B.T @ D1) * (B.T @ D2)))


def exp_skew(X: np.ndarray, t: float = 1.0) -> np.ndarray:
    """exp(tX) for skew-symmetric X via its SVD X = U D V^T.

    Uses exp(tX) = U cos(tD) U^T + U sin(tD) V^T, which holds for any SVD of a
    skew matrix since X^2 = -U D^2 U^T.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionError(f"expected a square matrix, got {X.shape}")
    if np.max(np.abs(X + X.T), initial=0.0) > SKEW_TOL:
        raise NotSkewError("matrix is not skew-symmetric")
    U, d, Vt = np.linalg.svd(X)
    return (U * np.cos(t * d)) @ U.T + (U * np.sin(t * d)) @ Vt


def geodesic_step(B, D: TangentVector, t: float = 1.0) -> StiefelPoint:
    """Point B(t) on the geodesic leaving B with velocity D."""
    B = as_point(B)
    _check_base(B, D)
    Bv, Dv = B.values, D.values
    r = B.r
    A = Bv.T @ Dv
    if np.max(np.abs(A + A.T), initial=0.0) > TANGENT_TOL * max(1.0, float(np.max(np.abs(A)))):
        raise NotSkewError("B^T D is not skew-symmetric")
    A = skew(A)
    Q, R = np.linalg.qr(Dv - Bv @ A)
    K = np.zeros((2 * r, 2 * r))
    K[:r, :r] = A
    K[:r, r:] = -R.T
    K[r:, :r] = R
    E = exp_skew(K, t)
    return StiefelPoint(Bv @ E[:r, :r] + Q @ E[r:, :r])


# --- vectorization -----------------------------------------------------------


def vec(X: np.ndarray) -> np.ndarray:
    """Column-stacking vec operator."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(v: np.ndarray, m: int, n: int) -> np.ndarray:
    return np.asarray(v).reshape((m, n), order="F")


def commutation_matrix(m: int, n: int) -> np.ndarray:
    """P_{m,n} with vec(X^T) = P_{m,n} vec(X) for X of shape m x n."""
    P = np.zeros((m * n, m * n))
    rows = np.arange(m * n)
    i, j = rows % m, rows // m  # vec(X)[k] = X[i, j]
    P[i * n + j, rows] = 1.0  # vec(X^T)[j + n*i] = X[i, j]
    return P


def tangent_basis(B) -> np.ndarray:
    """Frobenius-orthonormal basis of the tangent space, as vec'd columns.

    Columns are B (e_a e_b^T - e_b e_a^T)/sqrt(2) for a < b, followed by
    B_perp e_j e_k^T, giving M r - r (r + 1) / 2 columns.
    """
    B = as_point(B)
    M, r = B.shape
    Bv = B.values
    full_q = np.linalg.qr(Bv, mode="complete")[0]
    B_perp = full_q[:, r:]
    cols = []
    for a in range(r):
        for b in range(a + 1, r):
            S = np.zeros((r, r))
            S[a, b], S[b, a] = 1.0, -1.0
            cols.append(vec(Bv @ S) / np.sqrt(2.0))
    for k in range(r):
        for j in range(M - r):
            D = np.zeros((M, r))
            D[:, k] = B_perp[:, j]
            cols.append(vec(D))
    if not cols:
        return np.zeros((M * r, 0))
    return np.column_stack(cols)


@dataclass(frozen=True, eq=False)
class VecSystem:
    """Vectorized Newton operator: ``matrix @ vec(D) = rhs`` on tangent D."""

    matrix: np.ndarray
    rhs: np.ndarray
    permutation: np.ndarray


def _curvature_terms(B: np.ndarray, F_B: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Matrix of D -> -B skew(F_B^T D) - skew(D F_B^T) B - Pi D B^T F_B / 2."""
    M, r = B.shape
    I_M, I_r = np.eye(M), np.eye(r)
    Pi = I_M - B @ B.T
    # B skew(F^T D) = (B F^T D - B D^T F) / 2
    t1 = 0.5 * (np.kron(I_r, B @ F_B.T) - np.kron(F_B.T, B) @ P)
    # skew(D F^T) B = (D F^T B - F D^T B) / 2
    t2 = 0.5 * (np.kron((F_B.T @ B).T, I_M) - np.kron(B.T, F_B) @ P)
    t3 = 0.5 * np.kron((B.T @ F_B).T, Pi)
    return -(t1 + t2 + t3)


class NewtonSystem:
    """The Riemannian Hessian operator at B, factored for repeated solves.

    The operator is ``D -> F_BB(D) - B skew(F_B^T D) - skew(D F_B^T) B
    - Pi D B^T F_B / 2`` on the tangent space. Tangent vectors are
    parameterized as ``D = T z`` with T from :func:`tangent_basis`, which
    removes the constraint B^T D + D^T B = 0 and leaves a square system in
    ``M r - r (r + 1) / 2`` unknowns.
    """

    def __init__(self, B, F_B: np.ndarray, hess_apply: Callable[[TangentVector], np.ndarray]):
        self.base = B = as_point(B)
        F_B = np.asarray(F_B, dtype=float)
        if F_B.shape != B.shape:
            raise DimensionError(f"F_B shape {F_B.shape} != {B.shape}")
        M, r = B.shape
        self.F_B = F_B
        self.permutation = commutation_matrix(M, r)
        self.basis = T = tangent_basis(B)
        d = T.shape[1]
        hess_cols = np.empty((M * r, d))
        for j in range(d):
            hess_cols[:, j] = vec(hess_apply(TangentVector(unvec(T[:, j], M, r), B)))
        self.curvature = _curvature_terms(B.values, F_B, self.permutation)
        # extend the Hessian action by zero off the tangent space
        self.matrix = hess_cols @ T.T + self.curvature
        self.reduced = T.T @ self.matrix @ T
        if d == 0:
            self.rcond = 1.0
            self._lu = None
            return
        s = np.linalg.svd(self.reduced, compute_uv=False)
        self.rcond = float(s[-1] / s[0]) if s[0] > 0 else 0.0
        if not np.isfinite(self.rcond) or self.rcond < RCOND_MIN:
            raise SingularSystemError(f"reduced Newton system has rcond {self.rcond:.3g}")
        self._lu = sla.lu_factor(self.reduced)

    def apply(self, D: TangentVector) -> np.ndarray:
        _check_base(self.base, D)
        M, r = self.base.shape
        return unvec(self.matrix @ vec(D.values), M, r)

    def solve(self, rhs: TangentVector | np.ndarray) -> TangentVector:
        """Return the tangent D with ``operator(D) = rhs``."""
        R = rhs.values if isinstance(rhs, TangentVector) else np.asarray(rhs, dtype=float)
        M, r = self.base.shape
        if self._lu is None:
            return TangentVector(np.zeros((M, r)), self.base)
        z = sla.lu_solve(self._lu, self.basis.T @ vec(R))
        D = unvec(self.basis @ z, M, r)
        # remove rounding in B^T D so the result is exactly tangent
        Bv = self.base.values
        D = D - Bv @ sym(Bv.T @ D)
        return TangentVector(D, self.base)

    def metric(self) -> np.ndarray:
        """Gram matrix of the tangent basis under the canonical inner product."""
        Bv = self.base.values
        M, r = Bv.shape
        W = np.kron(np.eye(r), np.eye(M) - 0.5 * Bv @ Bv.T)
        return self.basis.T @ W @ self.basis

    def shifted_solve(self, rhs: TangentVector | np.ndarray, floor: float = 1e-8,
                      max_shift: float = 1e12) -> tuple[TangentVector, float]:
        """Solve ``(operator + c I) D = rhs`` with the smallest c in {0, floor, 10 floor, ...}
        that makes the shifted operator positive definite in the canonical metric."""
        R = rhs.values if isinstance(rhs, TangentVector) else np.asarray(rhs, dtype=float)
        M, r = self.base.shape
        if self._lu is None:
            return TangentVector(np.zeros((M, r)), self.base), 0.0
        Gm = self.metric()
        S = Gm @ self.reduced
        S = 0.5 * (S + S.T)
        rhs_c = Gm @ (self.basis.T @ vec(R))
        scale = max(1.0, float(np.max(np.abs(np.diag(S)))))
        shift = 0.0
        while True:
            try:
                L = np.linalg.cholesky(S + shift * Gm)
                break
            except np.linalg.LinAlgError:
                shift = floor * scale if shift == 0.0 else shift * 10.0
                if shift > max_shift * scale:
                    raise SingularSystemError("could not regularize the Stiefel Newton system")
        z = sla.cho_solve((L, True), rhs_c)
        D = unvec(self.basis @ z, M, r)
        Bv = self.base.values
        D = D - Bv @ sym(Bv.T @ D)
        return TangentVector(D, self.base), shift

    def vec_system(self, G: TangentVector) -> VecSystem:
        return VecSystem(self.matrix, -vec(G.values), self.permutation)


def solve_newton_system(B, F_B: np.ndarray, hess_apply) -> TangentVector:
    """Newton direction D = -Hess^{-1}(G) with G the intrinsic gradient."""
    system = NewtonSystem(B, F_B, hess_apply)
    G = project_to_tangent(system.base, F_B)
    return system.solve(-G)


def riemannian_hessian_form(B: np.ndarray, F_B: np.ndarray, euclid_form: float,
                            D1: np.ndarray, D2: np.ndarray) -> float:
    """Riemannian Hessian H(D1, D2) from the Euclidean pieces.

    ``euclid_form`` is the Euclidean second derivative f_BB(D1, D2).
    """
    Pi = np.eye(B.shape[0]) - B @ B.T
    t1 = 0.5 * np.trace((F_B.T @ D1 @ B.T + B.T @ D1 @ F_B.T) @ D2)
    t2 = 0.5 * np.trace((B.T @ F_B + F_B.T @ B) @ D1.T @ Pi @ D2)
    return float(euclid_form + t1 - t2)
