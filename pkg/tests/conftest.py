import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "invariant: unit invariant suite timed by the acceptance run")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_faces():
    """A small synthetic set for fast pipeline tests."""
    from bcralign.synth import SyntheticWorld, generate

    world = SyntheticWorld(seed=5)
    return world, generate(world, 40, seed=5)


@pytest.fixture(scope="session")
def tiny_model(tiny_faces):
    from bcralign.cascade import BcrConfig, train_bcr
    from bcralign.experiment import training_set

    _, faces = tiny_faces
    config = BcrConfig(n_trees=24, tree_depth=3, levels=2, n_candidates=20, augment=2, seed=3)
    return train_bcr(training_set(faces), config)
