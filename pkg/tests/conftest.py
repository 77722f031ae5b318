import numpy as np
import pytest

from nester.dataset import NoiseConfig, generate_dataset


@pytest.fixture(scope="session")
def tiny_bundle():
    """40 train + 10 test sequences, 2 chunks; enough for pipeline plumbing."""
    return generate_dataset(40, 10, 2, NoiseConfig(flip_prob=0.02, max_shift=1), seed=11)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
