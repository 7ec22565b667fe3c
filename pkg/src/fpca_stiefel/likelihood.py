"""Restricted negative log-likelihood of the reduced-rank model and its derivatives.

For subject i with design Phi_i (M x m_i) and centered responses y_i the
marginal covariance is ``P_i = sigma^2 I + Phi_i^T B Lambda B^T Phi_i``. The
loss is ``sum_i y_i^T P_i^{-1} y_i + log|P_i|``. Nothing here forms P_i: every
quantity goes through the r x r matrix ``Q_i = sigma^2 Lambda^{-1} + B^T
Phi_i Phi_i^T B`` and the per-subject statistics ``Phi_i Phi_i^T``,
``Phi_i y_i``, ``y_i^T y_i`` and ``m_i``.

Parameters are ``B`` (Stiefel), ``zeta = log(lambda)`` and ``tau = log(sigma^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, IndefiniteError
from .stiefel import StiefelPoint, TangentVector, as_point


@dataclass(frozen=True, eq=False)
class ModelParams:
    B: StiefelPoint
    zeta: np.ndarray
    tau: float

    def __post_init__(self):
        B = as_point(self.B)
        zeta = np.array(self.zeta, dtype=float).reshape(-1)
        if zeta.shape != (B.r,):
            raise DimensionError(f"zeta has length {zeta.size}, expected r={B.r}")
        if not (np.all(np.isfinite(zeta)) and np.isfinite(self.tau)):
            raise ValueError("zeta and tau must be finite")
        zeta.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def M(self) -> int:
        return self.B.M

    @property
    def r(self) -> int:
        return self.B.r

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.exp(self.zeta)

    @property
    def sigma2(self) -> float:
        return float(np.exp(self.tau))

    @property
    def tz(self) -> np.ndarray:
        """Stacked (tau, zeta_1, ..., zeta_r)."""
        return np.concatenate([[self.tau], self.zeta])

    def with_tz(self, tz: np.ndarray) -> "ModelParams":
        return ModelParams(self.B, tz[1:], tz[0])

    def with_B(self, B: StiefelPoint) -> "ModelParams":
        return ModelParams(B, self.zeta, self.tau)

    @classmethod
    def from_natural(cls, B, eigenvalues, sigma2) -> "ModelParams":
        return cls(as_point(B), np.log(np.asarray(eigenvalues, dtype=float)), float(np.log(sigma2)))


@dataclass(frozen=True, eq=False)
class SubjectCache:
    phi: np.ndarray
    ytilde: np.ndarray
    phiphi: np.ndarray = field(init=False)
    phiy: np.ndarray = field(init=False)

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        y = np.asarray(self.ytilde, dtype=float).reshape(-1)
        if phi.ndim != 2 or phi.shape[1] != y.size:
            raise DimensionError(f"phi {phi.shape} does not match {y.size} responses")
        if y.size < 1:
            raise DimensionError("a subject needs at least one measurement")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "ytilde", y)
        object.__setattr__(self, "phiphi", phi @ phi.T)
        object.__setattr__(self, "phiy", phi @ y)

    @property
    def m(self) -> int:
        return self.ytilde.size


@dataclass(frozen=True, eq=False)
class SubjectBatch:
    """Stacked sufficient statistics for n subjects."""

    C: np.ndarray  # (n, M, M)
    g: np.ndarray  # (n, M)
    yy: np.ndarray  # (n,)
    m: np.ndarray  # (n,)

    @property
    def n(self) -> int:
        return self.yy.shape[0]

    @property
    def M(self) -> int:
        return self.C.shape[1]

    @classmethod
    def from_caches(cls, caches: Sequence[SubjectCache]) -> "SubjectBatch":
        if len(caches) == 0:
            raise DimensionError("no subjects")
        return cls(
            C=np.stack([c.phiphi for c in caches]),
            g=np.stack([c.phiy for c in caches]),
            yy=np.array([c.ytilde @ c.ytilde for c in caches]),
            m=np.array([c.m for c in caches], dtype=float),
        )

    def subset(self, idx) -> "SubjectBatch":
        return SubjectBatch(self.C[idx], self.g[idx], self.yy[idx], self.m[idx])


def as_batch(data) -> SubjectBatch:
    if isinstance(data, SubjectBatch):
        return data
    if isinstance(data, SubjectCache):
        return SubjectBatch.from_caches([data])
    return SubjectBatch.from_caches(list(data))


def make_caches(basis, times_list, ytilde_list) -> list[SubjectCache]:
    from .splines import evaluate_design

    return [SubjectCache(evaluate_design(basis, t), y) for t, y in zip(times_list, ytilde_list)]


def _T(X: np.ndarray) -> np.ndarray:
    return np.swapaxes(X, -1, -2)


class Evaluation:
    """Everything about the loss at one parameter value, per subject.

    Built in a single pass over subjects; Hessian actions in B reuse the
    cached intermediates.
    """

    def __init__(self, params: ModelParams, data):
        batch = as_batch(data)
        if batch.M != params.M:
            raise DimensionError(f"data has M={batch.M}, params have M={params.M}")
        self.params = params
        self.batch = batch
        B = params.B.values
        r = params.r
        s2 = np.exp(params.tau)
        lam = np.exp(params.zeta)
        self.sigma2, self.lam = s2, lam

        CB = batch.C @ B  # (n, M, r)
        S = B.T @ CB  # (n, r, r)
        S = 0.5 * (S + _T(S))
        h = batch.g @ B  # (n, r)
        with np.errstate(over="ignore", divide="ignore"):
            Q = S + np.diag(s2 / lam)
        if not np.all(np.isfinite(Q)):
            raise IndefiniteError("Q_i has non-finite entries")
        try:
            L = np.linalg.cholesky(Q)
        except np.linalg.LinAlgError as exc:
            raise IndefiniteError("Q_i is not numerically positive definite") from exc
        eye = np.broadcast_to(np.eye(r), Q.shape)
        Linv = np.linalg.solve(L, eye)
        Qinv = _T(Linv) @ Linv
        logdetQ = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        a = np.einsum("nij,nj->ni", Qinv, h)  # Q^{-1} h
        self.CB, self.S, self.h, self.Qinv, self.a = CB, S, h, Qinv, a

        m, yy = batch.m, batch.yy
        quad = np.einsum("ni,ni->n", h, a)
        self.values = (yy - quad) / s2 + (m - r) * params.tau + np.sum(params.zeta) + logdetQ

        # Euclidean gradient in B
        resid = CB @ a[:, :, None] - batch.g[:, :, None]  # (n, M, 1)
        self.resid = resid[:, :, 0]
        self.grad_B = 2.0 / s2 * resid @ a[:, None, :] + 2.0 * CB @ Qinv

        # (tau, zeta) block
        u = a / lam  # H^T P^{-1} y
        W = np.diag(1.0 / lam) - s2 * Qinv / np.outer(lam, lam)  # H^T P^{-1} H
        Z = Qinv / lam[None, None, :]  # P^{-1} H = H Z
        ZSZ = _T(Z) @ S @ Z  # H^T P^{-2} H
        QS = Qinv @ S
        trQS = np.trace(QS, axis1=1, axis2=2)
        trQSQS = np.einsum("nij,nji->n", QS, QS)
        vv = (yy - 2.0 * quad + np.einsum("ni,nij,nj->n", a, S, a)) / s2**2  # y^T P^{-2} y
        vPv = (vv - np.einsum("ni,nij,nj->n", u, Qinv, u)) / s2  # y^T P^{-3} y
        tr_Pinv = (m - trQS) / s2
        tr_Pinv2 = (m - 2.0 * trQS + trQSQS) / s2**2
        Zu = np.einsum("nji,nj->ni", Z, u)  # H_k^T P^{-2} y
        Wd = np.diagonal(W, axis1=1, axis2=2)
        ZSZd = np.diagonal(ZSZ, axis1=1, axis2=2)

        n = batch.n
        g_tz = np.empty((n, r + 1))
        g_tz[:, 0] = -s2 * vv + s2 * tr_Pinv
        g_tz[:, 1:] = -lam * u**2 + lam * Wd
        H_tz = np.empty((n, r + 1, r + 1))
        H_tz[:, 0, 0] = s2 * (2.0 * s2 * vPv - vv) + s2 * (tr_Pinv - s2 * tr_Pinv2)
        cross = 2.0 * s2 * lam * u * Zu - s2 * lam * ZSZd
        H_tz[:, 0, 1:] = cross
        H_tz[:, 1:, 0] = cross
        ll = np.outer(lam, lam)
        zz = 2.0 * ll * (u[:, :, None] * u[:, None, :]) * W - ll * W**2
        idx = np.arange(r)
        zz[:, idx, idx] += -lam * u**2 + lam * Wd
        H_tz[:, 1:, 1:] = zz
        self.grad_tz = g_tz
        self.hess_tz = H_tz

    # -- totals ----------------------------------------------------------------
    @property
    def value(self) -> float:
        return float(np.sum(self.values))

    @property
    def grad_B_total(self) -> np.ndarray:
        return np.sum(self.grad_B, axis=0)

    @property
    def grad_tz_total(self) -> np.ndarray:
        return np.sum(self.grad_tz, axis=0)

    @property
    def hess_tz_total(self) -> np.ndarray:
        return np.sum(self.hess_tz, axis=0)

    # -- Hessian actions in B ----------------------------------------------------
    def hess_euclid(self, D: np.ndarray) -> np.ndarray:
        """Per-subject ``H_i(D)`` (the Euclidean Hessian applied to D).

        ``D`` broadcasts against the subject axis: shape (M, r) applies one
        direction to every subject, (n, M, r) one direction per subject, and
        (k, 1, M, r) k directions to every subject.
        """
        B = self.params.B.values
        C, g = self.batch.C, self.batch.g
        CB, Qinv, a, resid = self.CB, self.Qinv, self.a, self.resid
        s2 = self.sigma2
        D = np.asarray(D, dtype=float)
        n, M, r = CB.shape
        if D.ndim == 2:
            D = np.broadcast_to(D, (n, M, r))
        elif D.shape[-3] == 1:
            D = np.broadcast_to(D, D.shape[:-3] + (n, M, r))
        X = _T(CB) @ D  # (.., n, r, r)
        dQ = X + _T(X)
        Dg = np.einsum("...nmr,nm->...nr", D, g)  # D^T g
        dQa = np.einsum("...nij,nj->...ni", dQ, a)
        inner = (np.einsum("...nmr,nr->...nm", D, a)
                 + np.einsum("mr,...nr->...nm", B, np.einsum("nij,...nj->...ni", Qinv, Dg - dQa)))
        term1 = np.einsum("nmk,...nk->...nm", C, inner)[..., None] * a[:, None, :]
        right = np.einsum("...ni,nij->...nj", Dg - dQa, Qinv)
        term2 = resid[..., :, :, None] * right[..., None, :]
        H1 = 2.0 / s2 * (term1 + term2)
        CD = C @ D
        H2 = 2.0 * (CD - CB @ Qinv @ dQ) @ Qinv
        return H1 + H2

    def hess_B_apply(self, D, per_subject: bool = False) -> np.ndarray:
        """``F_BB(D) = H(D) - B H(D)^T B``, summed over subjects unless ``per_subject``."""
        Dv = D.values if isinstance(D, TangentVector) else np.asarray(D, dtype=float)
        B = self.params.B.values
        H = self.hess_euclid(Dv)
        if not per_subject:
            H = np.sum(H, axis=-3)
        return H - B @ _T(H) @ B

    def hess_B_apply_many(self, Ds: np.ndarray) -> np.ndarray:
        """Summed ``F_BB`` for a stack of directions of shape (k, M, r)."""
        B = self.params.B.values
        H = np.sum(self.hess_euclid(np.asarray(Ds)[:, None, :, :]), axis=1)
        return H - B @ _T(H) @ B


def evaluate(params: ModelParams, data) -> Evaluation:
    return Evaluation(params, data)


def q_matrix(params: ModelParams, cache: SubjectCache) -> np.ndarray:
    """``Q_i = sigma^2 Lambda^{-1} + B^T Phi_i Phi_i^T B``."""
    B = params.B.values
    Q = B.T @ cache.phiphi @ B
    with np.errstate(over="ignore"):
        Q = 0.5 * (Q + Q.T) + np.diag(np.exp(params.tau - params.zeta))
    if not np.all(np.isfinite(Q)):
        raise IndefiniteError("Q_i has non-finite entries")
    try:
        np.linalg.cholesky(Q)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteError("Q_i is not numerically positive definite") from exc
    return Q


def p_inverse(params: ModelParams, cache: SubjectCache) -> np.ndarray:
    """P_i^{-1} through the r x r matrix Q_i (used for checks, never in the fit)."""
    H = cache.phi.T @ params.B.values
    Q = q_matrix(params, cache)
    return (np.eye(cache.m) - H @ np.linalg.solve(Q, H.T)) / params.sigma2


def neg_loglik(params: ModelParams, data, per_subject: bool = False):
    ev = Evaluation(params, data)
    return ev.values if per_subject else ev.value


def euclid_grad_B(params: ModelParams, data, per_subject: bool = False) -> np.ndarray:
    ev = Evaluation(params, data)
    return ev.grad_B if per_subject else ev.grad_B_total


def hess_B_apply(params: ModelParams, data, D, per_subject: bool = False) -> np.ndarray:
    return Evaluation(params, data).hess_B_apply(D, per_subject=per_subject)


def grad_tau_zeta(params: ModelParams, data, per_subject: bool = False) -> np.ndarray:
    ev = Evaluation(params, data)
    return ev.grad_tz if per_subject else ev.grad_tz_total


def hess_tau_zeta(params: ModelParams, data, per_subject: bool = False) -> np.ndarray:
    ev = Evaluation(params, data)
    return ev.hess_tz if per_subject else ev.hess_tz_total
