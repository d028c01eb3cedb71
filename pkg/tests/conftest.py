import numpy as np
import pytest

from planted_reductions.rng import make_rng
from planted_reductions.settings import settings

settings.SEED = None
settings.VERIFY_REPETITIONS = 3


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(20240601, "tests")


@pytest.fixture
def other_rng() -> np.random.Generator:
    return make_rng(20240602, "tests")
