import numpy as np
import pytest

from fpca_stiefel.likelihood import ModelParams, SubjectCache, neg_loglik
from fpca_stiefel.optimizer import FitOptions, canonicalize, fit
from fpca_stiefel.stiefel import StiefelPoint

import oracles as orc
from conftest import Prepared


def test_easy_setting_converges(easy200_fit):
    rep = easy200_fit
    assert rep.converged, rep.failure_reason
    assert rep.final_grad_supnorm <= 1e-4
    assert rep.failure_reason is None


def test_output_is_admissible_and_canonical(easy200_fit):
    p = easy200_fit.params
    assert np.all(p.eigenvalues > 0) and p.sigma2 > 0
    assert np.all(np.diff(p.zeta) <= 0)
    B = p.B.values
    assert np.max(np.abs(B.T @ B - np.eye(3))) <= 1e-8
    for k in range(3):
        first = B[np.nonzero(np.abs(B[:, k]) > 1e-10)[0][0], k]
        assert first > 0


def test_trace_is_monotone(easy200_fit):
    obj = np.array([t.objective for t in easy200_fit.trace])
    grads = np.array([t.grad_supnorm for t in easy200_fit.trace])
    inc = np.diff(obj)
    far = grads[1:] > 10 * 1e-4
    assert np.all(inc[far] < 0)
    # near convergence only rounding-level wobble is tolerated
    assert np.all(inc <= 1e-12 * np.abs(obj[1:]) + 1e-300)


def test_refit_from_optimum_is_stationary(easy200, easy200_fit):
    again = fit(easy200.batch, 5, 3, easy200_fit.params)
    assert again.converged
    assert again.iterations <= 2
    assert np.max(np.abs(again.params.B.values - easy200_fit.params.B.values)) <= 1e-6


def test_deterministic(easy200):
    a = fit(easy200.batch, 5, 3, easy200.init)
    b = fit(easy200.batch, 5, 3, easy200.init)
    assert a.neg_loglik == b.neg_loglik
    np.testing.assert_array_equal(a.params.B.values, b.params.B.values)
    np.testing.assert_array_equal(a.params.zeta, b.params.zeta)
    assert [t.objective for t in a.trace] == [t.objective for t in b.trace]


def test_iteration_cap_reports_failure(easy200):
    rep = fit(easy200.batch, 5, 3, easy200.init, FitOptions(max_iter=1))
    assert not rep.converged
    assert "max_iter" in rep.failure_reason


def test_singular_system_is_reported_not_raised():
    rng = np.random.default_rng(0)
    B = StiefelPoint.random(4, 2, rng)
    # no design: the B block is flat, its Newton system is zero
    caches = [SubjectCache(np.zeros((4, 3)), rng.standard_normal(3)) for _ in range(5)]
    rep = fit(caches, 4, 2, ModelParams(B, [0.0, -0.5], 1.0))
    assert not rep.converged
    assert "singular" in rep.failure_reason


def test_dimension_checks(easy200):
    with pytest.raises(Exception):
        fit(easy200.batch, 5, 6, easy200.init)
    with pytest.raises(Exception):
        fit(easy200.batch, 6, 3, easy200.init)


def test_options_validation():
    with pytest.raises(ValueError):
        FitOptions(tol=0)
    with pytest.raises(ValueError):
        FitOptions(max_iter=0)
    with pytest.raises(ValueError):
        FitOptions(initial_alpha=1.5)
    opts = FitOptions()
    assert [opts.alpha_for(i) for i in (1, 2, 3, 4)] == [0.5, 0.5, 0.5, 1.0]


class TestCanonicalize:
    def _params(self):
        rng = np.random.default_rng(1)
        return canonicalize(ModelParams.from_natural(StiefelPoint.random(5, 3, rng), [2.0, 1.0, 0.5], 0.2))

    def test_idempotent(self):
        p = self._params()
        q = canonicalize(p)
        np.testing.assert_array_equal(q.B.values, p.B.values)
        np.testing.assert_array_equal(q.zeta, p.zeta)

    def test_undoes_swap_and_sign(self):
        p = self._params()
        B = p.B.values[:, [1, 0, 2]].copy()
        B[:, 2] *= -1
        q = canonicalize(ModelParams(StiefelPoint(B), p.zeta[[1, 0, 2]], p.tau))
        np.testing.assert_allclose(q.B.values, p.B.values, atol=1e-15)
        np.testing.assert_array_equal(q.zeta, p.zeta)

    def test_likelihood_invariant(self):
        rng = np.random.default_rng(2)
        params, caches = orc.random_instance(rng, M=5, r=3)
        shuffled = ModelParams(StiefelPoint(-params.B.values[:, ::-1]), params.zeta[::-1], params.tau)
        assert neg_loglik(canonicalize(shuffled), caches) == pytest.approx(neg_loglik(params, caches), rel=1e-12)


def test_indefinite_start_far_from_optimum_recovers():
    # a random orthonormal start is usually in an indefinite region
    prep = Prepared("easy", 200, 7, 5, 3)
    start = prep.init.with_B(StiefelPoint.random(5, 3, np.random.default_rng(3)))
    rep = fit(prep.batch, 5, 3, start)
    assert rep.converged, rep.failure_reason
