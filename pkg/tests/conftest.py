import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bergerwave import GridSpec, ModelParams, build_operators
from bergerwave.exceptions import StiffnessWarning

settings.register_profile("ci", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(autouse=True)
def _quiet_stiffness():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StiffnessWarning)
        yield


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def ops16(params):
    return build_operators(GridSpec(16), mu=params.mu, gamma=params.gamma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:>4} {'PASS' if ok else 'FAIL'}  {detail}")
