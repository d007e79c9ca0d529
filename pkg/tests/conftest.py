import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pwdeming import MCDataset, PrecisionProfile

settings.register_profile(
    "pwdeming", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pwdeming")

RL_5_01 = PrecisionProfile.rocke_lorenzato(5.0, 0.1)


def simulate_pairs(n=100, seed=0, profile=RL_5_01, lo=20.0, hi=100.0, alpha=0.0, beta=1.0):
    """Default design: geometric true values, independent normal errors on both axes."""
    rng = np.random.default_rng(seed)
    mu = np.geomspace(lo, hi, n)
    m = alpha + beta * mu
    x = mu + np.sqrt(profile(mu)) * rng.standard_normal(n)
    y = m + np.sqrt(profile(m)) * rng.standard_normal(n)
    return MCDataset(x, y)


@pytest.fixture
def rl_data():
    return simulate_pairs(n=60, seed=11)


@pytest.fixture
def exact_line():
    x = np.arange(1.0, 21.0)
    return MCDataset(x, 2.0 * x)
