import numpy as np
import pytest

from ttalab.benchmark import generate_dataset, train_source

TRAIN_SEED = 0
TEST_SEED = 777
K = 3


@pytest.fixture(scope="session")
def source_net():
    """Source checkpoint shared by adaptation and benchmark tests."""
    dataset = generate_dataset(K, 3000, seed=TRAIN_SEED)
    return train_source(dataset, epochs=20, seed=TRAIN_SEED)


@pytest.fixture(scope="session")
def test_dataset():
    """Held-out clean split, regenerated from its own seed."""
    return generate_dataset(K, 3000, seed=TEST_SEED)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
