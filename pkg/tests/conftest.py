import pytest
from hypothesis import HealthCheck, settings

from mtmbsp.rng import RandomStream

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def stream():
    return RandomStream(20240611)

