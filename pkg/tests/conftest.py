import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def base_poses():
    from posecanon.datagen import generate_base_poses
    return generate_base_poses(12, seed=7)


@pytest.fixture
def pose(base_poses):
    return base_poses[0].copy()
