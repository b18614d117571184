import numpy as np
import pytest

from genpod.quadrature import MassFactor, mass_factor


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a.T @ a + d * np.eye(d)


def random_factors(rng, shape, dense=True):
    """One random SPD mass factor per dimension (dense Cholesky or diagonal)."""
    out = []
    for i, d in enumerate(shape):
        if dense:
            out.append(mass_factor(random_spd(rng, d), dim=i))
        else:
            out.append(MassFactor(rng.uniform(0.5, 2.0, d), dim=i))
    return out
