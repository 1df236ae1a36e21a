import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from survstack.core import SurvivalDataset

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_dataset(times, events, X=None):
    times = np.asarray(times, float)
    if X is None:
        X = np.zeros((times.size, 1))
    return SurvivalDataset(np.asarray(X, float), times, np.asarray(events, bool))


@pytest.fixture
def tiny():
    # times [1,2,3], events [1,0,1]
    return make_dataset([1, 2, 3], [1, 0, 1], [[0.1], [0.2], [0.3]])


# (criterion, passed, detail) lines recorded by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
