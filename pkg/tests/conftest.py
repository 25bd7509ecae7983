import numpy as np
import pytest

from condfuse.tensor import reset_tape, set_default_dtype


@pytest.fixture(autouse=True)
def fresh_tape():
    set_default_dtype(np.float32)
    reset_tape()
    yield
    reset_tape()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
