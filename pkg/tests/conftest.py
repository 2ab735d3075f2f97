import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from twophase.constitutive import MaterialSystem
from twophase.grid import Grid

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def material():
    return MaterialSystem()


@pytest.fixture(scope="session")
def small_grid():
    return Grid(M_tan=16, M_nrm=16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def verdict():
    """Record and print one PASS/FAIL line per acceptance criterion."""
    def record(label: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} [{label}] {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
