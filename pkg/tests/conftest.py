import pytest
from hypothesis import HealthCheck, settings

from gwharmonic.gw_tree import validate_distribution

settings.register_profile("default", deadline=None, max_examples=50, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def half():
    """The law {1: 1/2, 2: 1/2} used throughout: m = 1.5."""
    return validate_distribution({1: 0.5, 2: 0.5})


@pytest.fixture(scope="session")
def binary():
    return validate_distribution({2: 1.0}, allow_deterministic=True)


@pytest.fixture(scope="session")
def ternary():
    return validate_distribution({3: 1.0}, allow_deterministic=True)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
