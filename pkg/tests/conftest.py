import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ivgaze.model import PixelStats, batch_from_dataset, preset
from ivgaze.synthcab import build_dataset, generate_cabin

settings.register_profile("ivgaze", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ivgaze")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def scene():
    return generate_cabin(seed=3)


@pytest.fixture(scope="session")
def tiny_cfg():
    return preset("tiny")


@pytest.fixture(scope="session")
def small_dataset(scene):
    return build_dataset(scene, 6, seed=1, size=64, n_subjects=3)


@pytest.fixture(scope="session")
def small_batch(small_dataset):
    b = batch_from_dataset(small_dataset)
    return PixelStats.from_batch(b).apply(b)
