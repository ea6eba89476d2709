import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ctmcmix", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ctmcmix")


def random_K(rng, n, upper=1.0):
    R = rng.uniform(0, upper, (n, n))
    np.fill_diagonal(R, 0.0)
    np.fill_diagonal(R, -R.sum(axis=1))
    return R


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
