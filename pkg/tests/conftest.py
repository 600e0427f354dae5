import random

import pytest

from helpers import build_example_world, build_world


@pytest.fixture
def rng():
    return random.Random(20240817)


@pytest.fixture(scope="module")
def example_world():
    return build_example_world()


@pytest.fixture
def small_world():
    return build_world(random.Random(99), n_segments=4, frames_per_segment=30, seed=5)
