import numpy as np
import pytest

from reservoir import NoiseLocation, ReservoirKind, ReservoirSpec, Topology, generate_reservoir

SQRT3 = np.sqrt(3.0)


def delay_line(n, variances=None, location=NoiseLocation.OUTPUT):
    """Whitened fixture: outputs sqrt(3) U(t - k) plus optional noise"""
    return generate_reservoir(
        ReservoirKind.LINEAR,
        n,
        input_scale=SQRT3,
        topology=Topology.DELAY_LINE,
        noise_location=location if variances is not None else NoiseLocation.NONE,
        noise_covariance=variances,
    )


def identity_channel():
    """n = 1, A = 0, B = 1: the output is the input itself"""
    return ReservoirSpec(ReservoirKind.LINEAR, np.zeros((1, 1)), np.ones((1, 1)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def linear_reservoir():
    return generate_reservoir(ReservoirKind.LINEAR, 4, spectral_radius=0.5, seed=3)
