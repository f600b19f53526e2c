import numpy as np
import pytest

from memegp.dataset import synth_bright_quadrant


@pytest.fixture(scope="session")
def quadrant_ds():
    """The standard desk-scale separable dataset (50/class, 16x16, 5% noise)."""
    return synth_bright_quadrant(50, 16, 0.05, np.random.default_rng(0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
