import numpy as np
import pytest

from uqsense import fixtures
from uqsense.extraction import extract


@pytest.fixture(scope="session")
def ref_mem():
    return fixtures.reference_memory()


@pytest.fixture(scope="session")
def ref_params(ref_mem):
    return extract(ref_mem)


@pytest.fixture(scope="session")
def flat_frame(ref_mem):
    return fixtures.synthesize_frame(ref_mem, 60.0)


@pytest.fixture(scope="session")
def step_frame(ref_mem):
    return fixtures.synthesize_frame(ref_mem, fixtures.step_scene(30.0, 33.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
