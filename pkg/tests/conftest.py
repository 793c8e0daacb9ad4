import numpy as np
import pytest

from gesturegen import corpus


@pytest.fixture(scope="session")
def small_clips():
    return corpus.make_synthetic_corpus(6, seed=3, duration=30.0)


@pytest.fixture(scope="session")
def small_processed(small_clips):
    return corpus.preprocess_corpus(small_clips, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
