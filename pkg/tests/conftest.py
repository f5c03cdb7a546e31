import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from distmdp import wireless
from distmdp.mdp import candidate_control_set, value_iteration

settings.register_profile("ci", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def ex4():
    return wireless.build_mdp(wireless.example4_config())


@pytest.fixture(scope="session")
def ex4_solved(ex4):
    V = value_iteration(ex4)
    return V, candidate_control_set(ex4, V)


@pytest.fixture(scope="session")
def ex5():
    return wireless.build_mdp(wireless.example5_config())


@pytest.fixture(scope="session")
def ex7():
    return wireless.build_mdp(wireless.example7_config())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` prints and records one PASS/FAIL line, then asserts ``ok``."""

    def report(n, ok, detail=""):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        _CRITERIA[n] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
