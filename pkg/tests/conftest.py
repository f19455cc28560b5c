import numpy as np
import pytest

from scene_sim import RandomSource, population_from_arrays


@pytest.fixture
def rng():
    return RandomSource(12345)


def make_uniform_population(n, beta=1.0, cap=10.0):
    """n identical devices with equal weight and calibrated gains."""
    return population_from_arrays(
        np.full(n, 1.0 / n), np.full(n, beta), power_caps=np.full(n, cap)
    )
