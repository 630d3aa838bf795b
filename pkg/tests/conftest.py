import numpy as np
import pytest

from helpers import DEFAULT_K


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def intrinsics():
    return DEFAULT_K
