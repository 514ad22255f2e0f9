import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from edfa_twin.datasets import DatasetProtocol
from edfa_twin.sim import default_amplifier_config, generate_dataset

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

APC_SETPOINT = 2.0

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def agc_amp():
    return default_amplifier_config()


@pytest.fixture(scope="session")
def apc_amp():
    return default_amplifier_config(mode="APC", setpoint=APC_SETPOINT)


@pytest.fixture(scope="session")
def grid(agc_amp):
    return agc_amp[0]


@pytest.fixture(scope="session")
def protocol(grid):
    return DatasetProtocol.table1(len(grid))


@pytest.fixture(scope="session")
def agc_clean(agc_amp, protocol):
    """480 noise-free AGC samples: the first 400 are the fixed test set."""
    grid, amp = agc_amp
    return generate_dataset(amp, protocol, 480, seed=2, grid=grid)


@pytest.fixture(scope="session")
def agc_noisy(agc_amp, protocol):
    """Same inputs as ``agc_clean`` with 0.05 dB gain noise."""
    grid, amp = agc_amp
    return generate_dataset(amp, protocol, 480, noise_db=0.05, seed=2, grid=grid)


@pytest.fixture(scope="session")
def apc_clean(apc_amp, protocol):
    grid, amp = apc_amp
    return generate_dataset(amp, protocol, 480, seed=3, grid=grid)


@pytest.fixture(scope="session")
def small_agc(agc_clean):
    """A small noise-free dataset for quick unit tests (40 records)."""
    return agc_clean.subset(range(400, 440))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
