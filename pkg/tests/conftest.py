import numpy as np
import pytest

from tpgsr.data.dataset import generate_split
from tpgsr.engine.tensor import precision
from tpgsr.logging import TPGSRLogger
from tpgsr.models.recognizer import RecognizerModel

TINY_REC_CHANNELS = (4, 4, 8, 8)


@pytest.fixture(autouse=True)
def setup_logger():
    logger = TPGSRLogger.get_logger()
    logger.set_level("DEBUG")
    return logger


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def f64():
    with precision("f64"):
        yield


@pytest.fixture(scope="session")
def tiny_splits():
    """Six training and three test samples, one of each difficulty per three."""
    return generate_split("train", 6, seed=3), generate_split("test", 3, seed=3)


@pytest.fixture
def tiny_recognizer():
    return RecognizerModel(np.random.default_rng(1), channels=TINY_REC_CHANNELS).eval()
