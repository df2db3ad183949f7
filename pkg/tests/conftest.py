import numpy as np
import pytest

from spaer.eqfeatures import default_bank
from spaer.simulator import SimConfig, make_phantom


@pytest.fixture(scope="session")
def bank():
    return default_bank()


@pytest.fixture(scope="session")
def phantom32():
    return make_phantom(SimConfig(seed=11, size=32))


@pytest.fixture(scope="session")
def phantom64():
    return make_phantom(SimConfig(seed=1, size=64))


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def random_rotation(rng, max_deg=180.0):
    """Uniform axis, uniform angle up to max_deg."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0, max_deg))
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
