import sys
from pathlib import Path

from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


import pytest  # noqa: E402

from fpca_stiefel.initializer import center, estimate_mean, initial_params  # noqa: E402
from fpca_stiefel.likelihood import as_batch, make_caches  # noqa: E402
from fpca_stiefel.simulation import generate, make_setting  # noqa: E402
from fpca_stiefel.splines import build_basis  # noqa: E402


class Prepared:
    """A simulated dataset with mean, basis, batch and starting values for one (M, r)."""

    def __init__(self, setting, n, seed, M, r):
        self.spec = make_setting(setting)
        self.data, self.truth = generate(self.spec, n, seed)
        self.mean = estimate_mean(self.data)
        self.basis = build_basis(M)
        self.batch = as_batch(make_caches(self.basis, self.data.times, center(self.data, self.mean)))
        self.init = initial_params(self.data, self.basis, r, mean=self.mean)
        self.M, self.r = M, r


@pytest.fixture(scope="session")
def easy200():
    return Prepared("easy", 200, 11, 5, 3)


@pytest.fixture(scope="session")
def easy200_fit(easy200):
    from fpca_stiefel.optimizer import fit

    return fit(easy200.batch, 5, 3, easy200.init)
