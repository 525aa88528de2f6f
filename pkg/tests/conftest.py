import os

# pin BLAS threads before numpy loads: reproducible and faster at these sizes
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from geoctx.synthcity import CityParams, generate_city


@pytest.fixture(scope="session")
def city():
    """Default synthetic city (seed 0) shared across tests."""
    return generate_city(CityParams(seed=0))


@pytest.fixture(scope="session")
def small_city():
    """Quarter-size city that fits one training window."""
    return generate_city(CityParams(seed=1, extent=500.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
