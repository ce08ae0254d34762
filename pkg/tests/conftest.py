import numpy as np
import pytest

from rbmlab import ensemble


@pytest.fixture(scope="session")
def small_profile():
    """Translation-invariant profile at a comfortable test size."""
    return ensemble.build_translation_invariant(64, 10, ensemble.power_decay(4.0))


@pytest.fixture(scope="session")
def block_profile():
    sigma = ensemble.nearest_neighbor_sigma(6)
    return ensemble.build_block_band(6, 12, sigma)


@pytest.fixture(scope="session")
def tiny_profile():
    return ensemble.build_translation_invariant(16, 5, ensemble.power_decay(4.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
