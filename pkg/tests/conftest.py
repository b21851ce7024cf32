import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pedev.grid import Domain

settings.register_profile("pedev", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pedev")

_CRITERIA = []


@pytest.fixture
def domain():
    return Domain(1.0, 1.0, 16, 16, 9)


@pytest.fixture
def small():
    return Domain(1.0, 1.0, 8, 8, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed in the summary."""
    def record(number, passed, detail):
        _CRITERIA.append((number, bool(passed), detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_CRITERIA, key=lambda c: (str(c[0]), c[2])):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
