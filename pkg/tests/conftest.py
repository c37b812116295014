import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from splitlab.frequencies import FrequencyVector, PerturbationSeries

settings.register_profile("numeric", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("numeric")

GOLDEN = (math.sqrt(5) - 1) / 2


@pytest.fixture
def omega2():
    return FrequencyVector((1.0, GOLDEN))


@pytest.fixture
def f_two_modes():
    return PerturbationSeries.cosines({(1, 0): 1.0, (0, 1): 1.0})


@pytest.fixture
def f_diffusion():
    return PerturbationSeries.cosines({(1, 0): 1.0, (1, 1): 1.0})


def sup_bowl(N=1024, centre=(math.pi, math.pi)):
    ax = 2 * math.pi * np.arange(N) / N
    mesh = np.meshgrid(*([ax] * len(centre)), indexing="ij")
    d = np.max(np.stack([np.abs((m - c + math.pi) % (2 * math.pi) - math.pi)
                         for m, c in zip(mesh, centre)]), axis=0)
    return d**2
