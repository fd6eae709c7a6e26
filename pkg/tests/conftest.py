import os

import pytest
from hypothesis import HealthCheck, settings

# Deterministic property tests: same examples every run, no deadline
# flakiness on slow CI boxes.
settings.register_profile(
    "deterministic",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("deterministic")

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


@pytest.fixture(scope="session")
def fixtures_dir() -> str:
    return os.path.abspath(FIXTURES)


def fixture_path(name: str) -> str:
    return os.path.abspath(os.path.join(FIXTURES, name))
