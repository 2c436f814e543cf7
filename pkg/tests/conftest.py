import warnings

import numpy as np
import pytest

from batchot.rng import StreamKey

warnings.filterwarnings("ignore", message=".*TBB.*")


@pytest.fixture
def key():
    return StreamKey(987654321)


@pytest.fixture
def rng():
    return np.random.default_rng(424242)
