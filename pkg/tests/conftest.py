import numpy as np
import pytest

from perwave.acceptance import Waves
from perwave.linear import make_sampler
from perwave.model import builtin_viscous_psystem, linear_system
from perwave.profile import constant_state, duffing_profile, refine_profile


@pytest.fixture(scope="session")
def waves():
    return Waves()


@pytest.fixture(scope="session")
def duffing(waves):
    return waves.duffing


@pytest.fixture(scope="session")
def duffing64(waves):
    return waves.duffing_64


@pytest.fixture(scope="session")
def small_sampler(duffing64):
    """Duffing semigroup on 32 periods, 64 nodes per period."""
    return make_sampler(duffing64, 32, 64)


@pytest.fixture(scope="session")
def heat_sampler():
    base = constant_state(linear_system([[0.0]]), [0.0], num_points=32, period=2 * np.pi)
    return make_sampler(base, 64, 32)


@pytest.fixture(scope="session")
def psystem():
    return builtin_viscous_psystem()
