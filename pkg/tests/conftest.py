import numpy as np
import pytest

from hcr.core import chronological_split
from hcr.simulator import WorldSpec, build_world, simulate_log


@pytest.fixture
def small_spec():
    return WorldSpec(num_users=30, num_items=40, impressions_per_user=30)


@pytest.fixture
def small_world(small_spec):
    return build_world(small_spec, seed=3)


@pytest.fixture
def small_log(small_world):
    return simulate_log(small_world, seed=3)


@pytest.fixture
def small_split(small_log):
    return chronological_split(small_log, 0.7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
