import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pendbasins import DampingProfile, IntegratorConfig, SystemParams

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# cheaper than the default h = 2 pi / 1000 yet far inside the classification tolerances
FAST_CFG = IntegratorConfig.adaptive(1e-9)

SYS_A = SystemParams(0.5, 0.1)
SYS_B = SystemParams(-0.1, 0.545)


@pytest.fixture
def fast_cfg():
    return FAST_CFG


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def constant(g: float) -> DampingProfile:
    return DampingProfile.constant(g)


# one line per exit criterion, filled by test_acceptance and echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
