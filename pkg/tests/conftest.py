import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from drnet import DRNet
from drnet.data import synth_arrays

_limits = None


def pytest_configure(config):
    # single-threaded BLAS keeps results bit-reproducible and timings honest
    global _limits
    _limits = threadpool_limits(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def model64():
    """Default float64 model; tests must not train it."""
    return DRNet(seed=0, dtype=np.float64)


@pytest.fixture(scope="session")
def tiny_data():
    return synth_arrays(8, 64, 64, seed=7)
