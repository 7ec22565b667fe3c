import numpy as np
import pytest

from fpca_stiefel.errors import DimensionError, DomainError
from fpca_stiefel.simulation import (
    HYBRID_EIGENVALUES,
    NOISE_TAGS,
    ReplicateRecord,
    draw_noise,
    generate,
    make_setting,
    mise_eigenfunctions,
    nmse,
    quadrature,
    replicate_seed,
    run_benchmark,
    summarize,
)


def test_easy_eigenvalues():
    np.testing.assert_allclose(make_setting("easy").eigenvalues, [1.0, 0.6598, 0.5173], atol=5e-5)


def test_hybrid_eigenvalues():
    lam = make_setting("hybrid").eigenvalues
    np.testing.assert_array_equal(lam[:4], [1, 0.66, 0.52, 0.07])
    assert lam.size == 10 and lam[4] == 9.47e-3 and lam[-1] == 4.30e-7
    assert tuple(lam) == HYBRID_EIGENVALUES


@pytest.mark.parametrize("name", ["easy", "practical", "hybrid", "challenging"])
def test_truth_eigenfunctions_orthonormal(name):
    spec = make_setting(name)
    x, w = quadrature()
    psi = spec.eigenfunctions(x)
    np.testing.assert_allclose((psi * w) @ psi.T, np.eye(spec.r), atol=1e-8)


def test_unknown_setting_and_noise():
    with pytest.raises(DomainError):
        make_setting("hard")
    with pytest.raises(DomainError):
        make_setting("easy", noise="cauchy")


def test_generate_is_reproducible():
    spec = make_setting("practical", noise="t4")
    a, ta = generate(spec, 30, 42)
    b, tb = generate(spec, 30, 42)
    for s, u in zip(a.subjects, b.subjects):
        np.testing.assert_array_equal(s.times, u.times)
        np.testing.assert_array_equal(s.values, u.values)
    np.testing.assert_array_equal(np.array(ta.scores), np.array(tb.scores))


def test_generate_design():
    data, truth = generate(make_setting("easy"), 300, 1)
    assert data.n == 300
    assert data.m.min() >= 2 and data.m.max() <= 10
    t, _, _ = data.pooled()
    assert t.min() >= 0 and t.max() <= 1
    assert len(truth.to_json()["grid"]) == 201


@pytest.mark.parametrize("tag", NOISE_TAGS)
def test_noise_has_unit_variance(tag):
    x = draw_noise(np.random.default_rng(0), tag, 100_000)
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.02


def test_generated_variance_matches_model():
    spec = make_setting("easy", sigma2=0.1)
    data, _ = generate(spec, 4000, 2)
    t, y, _ = data.pooled()
    expected = (spec.eigenvalues @ spec.eigenfunctions(t) ** 2) + 0.1
    assert np.mean(y**2) == pytest.approx(np.mean(expected), rel=0.03)


class TestMise:
    def setup_method(self):
        self.x, self.w = quadrature()
        self.psi = make_setting("easy").eigenfunctions(self.x)

    def test_exact(self):
        np.testing.assert_allclose(mise_eigenfunctions(self.psi, self.psi, self.w), 0.0, atol=1e-15)

    def test_sign_flip(self):
        np.testing.assert_array_equal(mise_eigenfunctions(-self.psi, self.psi, self.w),
                                      mise_eigenfunctions(self.psi, self.psi, self.w))

    def test_rotation_closed_form(self):
        c = 0.3
        est = (self.psi[0] + c * self.psi[1]) / np.sqrt(1 + c * c)
        got = mise_eigenfunctions(est[None], self.psi[:1], self.w)[0]
        assert got == pytest.approx(2 * (1 - 1 / np.sqrt(1 + c * c)), abs=1e-8)

    def test_grid_mismatch(self):
        with pytest.raises(DimensionError):
            mise_eigenfunctions(self.psi[:, :-1], self.psi, self.w)


def test_nmse():
    assert nmse([2.0, 2.0], 2.0) == 0.0
    assert nmse([4.0], 2.0) == 1.0
    est = np.random.default_rng(3).normal(0.5, 0.1, 25)
    assert nmse(est, 0.5) == pytest.approx(sum((e - 0.5) ** 2 for e in est) / 25 / 0.25, rel=1e-12)
    with pytest.raises(DomainError):
        nmse([1.0], 0.0)


def test_replicate_seeds_differ():
    seeds = {replicate_seed(7, k) for k in range(100)}
    assert len(seeds) == 100
    assert replicate_seed(7, 3) == replicate_seed(7, 3)


def test_benchmark_reproducible_across_workers():
    spec = make_setting("easy")
    a = run_benchmark(spec, 80, 2, [5], [3], seed=5, workers=1)
    b = run_benchmark(spec, 80, 2, [5], [3], seed=5, workers=2)
    strip = lambda rep: [{k: v for k, v in vars(r).items() if k != "seconds"} for r in rep.records]  # noqa: E731
    assert strip(a) == strip(b)
    assert a.mise_mean == b.mise_mean and a.sigma2_nmse == b.sigma2_nmse


def test_single_replicate():
    rep = run_benchmark(make_setting("easy"), 80, 1, [5], [3], seed=1, workers=1)
    assert rep.replicates == 1 and rep.converged <= 1
    assert rep.mise_sd == [0.0] * len(rep.mise_mean)


def test_converged_only_aggregation():
    spec = make_setting("easy")
    good = ReplicateRecord(0, 1, True, 5, 3, [0.1, 0.2, 0.3], [1.1, 0.6, 0.5], 0.07)
    good2 = ReplicateRecord(1, 2, True, 5, 3, [0.3, 0.2, 0.1], [0.9, 0.7, 0.5], 0.05)
    bad = ReplicateRecord(2, 3, False, 5, 3, failure="max_iter")
    rep = summarize(spec, 100, 0, [5], [3], [good, bad, good2])
    assert rep.converged == 2 and rep.replicates == 3
    np.testing.assert_allclose(rep.mise_mean, [0.2, 0.2, 0.2])
    assert rep.sigma2_nmse == pytest.approx(nmse([0.07, 0.05], spec.sigma2))
    assert rep.eigenvalue_nmse[0] == pytest.approx(nmse([1.1, 0.9], 1.0))
    assert rep.selection_counts == {"5,3": 2}
