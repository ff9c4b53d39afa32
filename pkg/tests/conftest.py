import numpy as np
import pytest

from volcodec.params import init_params
from volcodec.volume import Volume, synth_volume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_params():
    """Tiny but structurally complete parameter set (m=2, 8-bit)."""
    return init_params(m=2, depth_bits=8, scale_l=1.0, seed=7)


@pytest.fixture
def default_params():
    return init_params(m=16, depth_bits=8, scale_l=1.0, seed=0)


def random_volume(rng, t, h, w, depth_bits):
    samples = rng.integers(0, 1 << depth_bits, size=(t, h, w), dtype=np.uint16)
    return Volume(depth_bits=depth_bits, samples=samples)


@pytest.fixture
def smooth_vol():
    return synth_volume("smooth3d", 4, 16, 16, 8, 42)
