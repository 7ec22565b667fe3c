"""Alternating Newton-Raphson fit: (tau, zeta) by Euclidean Newton, B on the Stiefel manifold."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, IndefiniteError, SingularSystemError
from .likelihood import Evaluation, ModelParams, as_batch, evaluate
from .stiefel import NewtonSystem, StiefelPoint, canonical_inner, geodesic_step, project_to_tangent

log = logging.getLogger(__name__)

EIGEN_GAP_WARN = 1e-6
ROUNDING_SLACK = 1e-12


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-4
    max_iter: int = 100
    initial_alpha: float = 0.5
    damped_iterations: int = 3
    backtrack_factor: float = 0.5
    max_backtracks: int = 20
    levenberg_floor: float = 1e-8

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.initial_alpha <= 1:
            raise ValueError("initial_alpha must lie in (0, 1]")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")

    def alpha_for(self, iteration: int) -> float:
        return self.initial_alpha if iteration <= self.damped_iterations else 1.0


@dataclass
class IterationRecord:
    objective: float
    grad_supnorm: float
    alpha: float
    alpha_tz: float


@dataclass
class FitReport:
    params: ModelParams
    converged: bool
    iterations: int
    final_grad_supnorm: float
    neg_loglik: float
    trace: list[IterationRecord] = field(default_factory=list)
    failure_reason: str | None = None
    seconds: float = 0.0

    @property
    def M(self) -> int:
        return self.params.M

    @property
    def r(self) -> int:
        return self.params.r


def canonicalize(params: ModelParams) -> ModelParams:
    """Sort eigenvalues in decreasing order and fix column signs of B.

    The sign convention makes the first entry of each column with absolute
    value above 1e-10 positive. B Lambda B^T is unchanged, hence so is the loss.
    """
    order = np.argsort(-params.zeta, kind="stable")
    B = params.B.values[:, order]
    for k in range(B.shape[1]):
        nz = np.nonzero(np.abs(B[:, k]) > 1e-10)[0]
        if nz.size and B[nz[0], k] < 0:
            B[:, k] = -B[:, k]
    return ModelParams(StiefelPoint(B), params.zeta[order], params.tau)


def _grad_supnorm(ev: Evaluation) -> tuple[float, float]:
    G = project_to_tangent(ev.params.B, ev.grad_B_total).values
    return float(np.max(np.abs(G))), float(np.max(np.abs(ev.grad_tz_total)))


def levenberg_solve(H: np.ndarray, g: np.ndarray, floor: float = 1e-8) -> tuple[np.ndarray, float]:
    """Solve (H + c I) d = -g with the smallest c in {0, floor, 10 floor, ...} giving a Cholesky."""
    shift = 0.0
    eye = np.eye(H.shape[0])
    scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
    while True:
        try:
            L = np.linalg.cholesky(H + shift * eye)
            break
        except np.linalg.LinAlgError:
            shift = floor if shift == 0.0 else shift * 10.0
            if shift > 1e12 * scale:
                raise SingularSystemError("could not regularize the (tau, zeta) Hessian")
    y = np.linalg.solve(L, -g)
    return np.linalg.solve(L.T, y), shift


def _try_value(params: ModelParams, batch) -> float:
    try:
        return evaluate(params, batch).value
    except (IndefiniteError, FloatingPointError):
        return np.inf


def _backtrack(make, batch, bound: float, a: float, opts: FitOptions):
    """Halve ``a`` until the candidate's objective is at most ``bound``; a=0 means no step."""
    for _ in range(opts.max_backtracks + 1):
        cand = make(a)
        f1 = _try_value(cand, batch)
        if f1 <= bound:
            return cand, f1, a
        a *= opts.backtrack_factor
    return None, np.inf, 0.0


def fit(data, M: int, r: int, init: ModelParams, opts: FitOptions | None = None) -> FitReport:
    """Minimize the negative log-likelihood from ``init``.

    Never raises on numerical failure: a singular Newton system or exhausted
    backtracking ends the fit with ``converged=False`` and a reason.
    """
    opts = opts or FitOptions()
    batch = as_batch(data)
    if r > M:
        raise DimensionError(f"r={r} exceeds M={M}")
    if init.M != M or init.r != r or batch.M != M:
        raise DimensionError("initial parameters or data do not match (M, r)")

    start = time.perf_counter()
    params = init
    trace: list[IterationRecord] = []
    reason = None
    converged = False
    iterations = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        try:
            ev = evaluate(params, batch)
        except IndefiniteError as exc:
            return _failed(params, np.inf, np.inf, 0, trace, f"initial point: {exc}", start)
        while True:
            g_B, g_tz = _grad_supnorm(ev)
            gnorm = max(g_B, g_tz)
            if gnorm <= opts.tol:
                converged = True
                break
            if iterations >= opts.max_iter:
                reason = f"max_iter={opts.max_iter} reached"
                break
            iterations += 1
            f0 = ev.value
            near = gnorm <= 10 * opts.tol

            # near the optimum, objective changes fall below rounding; allow that much slack
            slack = ROUNDING_SLACK * max(1.0, abs(f0)) if near else 0.0

            # (a) Newton step in (tau, zeta)
            step, _ = levenberg_solve(ev.hess_tz_total, ev.grad_tz_total, opts.levenberg_floor)
            tz0 = params.tz
            cand, f1, alpha_tz = _backtrack(lambda a: params.with_tz(tz0 + a * step), batch,
                                            f0 + slack, 1.0, opts)
            if alpha_tz > 0:
                params, f0 = cand, f1
                ev = evaluate(params, batch)

            # (b) Newton step in B along a geodesic
            try:
                system = NewtonSystem(params.B, ev.grad_B_total, ev.hess_B_apply)
            except SingularSystemError as exc:
                reason = f"singular Newton system: {exc}"
                break
            B0 = params.B
            G = project_to_tangent(B0, ev.grad_B_total)
            a0 = opts.alpha_for(iterations)
            direction = system.solve(-G)
            alpha_B = 0.0
            if canonical_inner(B0, G, direction) < 0:
                cand, f1, alpha_B = _backtrack(lambda a: params.with_B(geodesic_step(B0, direction, a)),
                                               batch, f0 + slack, a0, opts)
            if alpha_B == 0 and not near:
                # indefinite Hessian far from the optimum: shift towards the gradient direction
                try:
                    direction, shift = system.shifted_solve(-G, opts.levenberg_floor)
                except SingularSystemError:
                    shift = 0.0
                if shift > 0:
                    cand, f1, alpha_B = _backtrack(
                        lambda a: params.with_B(geodesic_step(B0, direction, a)), batch, f0, a0, opts)
            if alpha_B > 0:
                params, f0 = cand, f1
                ev = evaluate(params, batch)
            trace.append(IterationRecord(f0, gnorm, alpha_B, alpha_tz))
            log.debug("iter %d: F=%.10g |grad|=%.3g alpha=%.3g alpha_tz=%.3g",
                      iterations, f0, gnorm, alpha_B, alpha_tz)
            if alpha_B == 0 and alpha_tz == 0:
                if near:
                    # rounding floor of the objective; accept if the gradient is tiny
                    g_B, g_tz = _grad_supnorm(ev)
                    gnorm = max(g_B, g_tz)
                    converged = gnorm <= opts.tol
                if not converged:
                    reason = "line search could not decrease the objective"
                break

    g_B, g_tz = _grad_supnorm(ev)
    final_params = canonicalize(params)
    _warn_on_ties(final_params)
    return FitReport(
        params=final_params,
        converged=converged,
        iterations=iterations,
        final_grad_supnorm=max(g_B, g_tz),
        neg_loglik=ev.value,
        trace=trace,
        failure_reason=None if converged else reason,
        seconds=time.perf_counter() - start,
    )


def _failed(params, f, g, iterations, trace, reason, start) -> FitReport:
    return FitReport(params=params, converged=False, iterations=iterations,
                     final_grad_supnorm=g, neg_loglik=f, trace=trace,
                     failure_reason=reason, seconds=time.perf_counter() - start)


def _warn_on_ties(params: ModelParams) -> None:
    if params.r > 1 and np.min(-np.diff(params.zeta)) < EIGEN_GAP_WARN:
        warnings.warn("fitted eigenvalues are (nearly) tied; eigenfunctions are not identifiable",
                      RuntimeWarning, stacklevel=3)
