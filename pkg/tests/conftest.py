import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lagdeploy.flow import FlowParams, ModeSet, build_mode_set

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# filled by the acceptance module, printed once at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def mode_set():
    return build_mode_set(3)


@pytest.fixture
def params(mode_set):
    return FlowParams.uniform(mode_set, d=0.5, sigma=0.5, sigma_x=0.1)


@pytest.fixture
def small_params():
    ms = ModeSet.from_representatives([(1, 0), (0, 1), (1, 1)])
    return FlowParams.uniform(ms, d=0.5, sigma=0.5, sigma_x=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
