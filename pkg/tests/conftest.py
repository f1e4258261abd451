import numpy as np
import pytest

from npsdo.discretization import reduced_system
from npsdo.scene import IndicatorImage, random_scene, rasterize


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction checks")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def mixed_image(n=16, seed=0):
    """Random scene with an air band on top, so the reduced system is SPD."""
    return rasterize(random_scene((n, n), seed))


def box_image(n):
    """Fluid box, solid floor and walls, one air row on top."""
    labels = np.zeros((n, n), dtype=np.int8)
    labels[:, -1] = 1
    return IndicatorImage.from_labels(labels)


@pytest.fixture
def poisson16():
    I = box_image(16)
    A, _, rmap = reduced_system(I)
    return I, A, rmap
