import numpy as np
import pytest

from compbeam.problem import Instance
from compbeam.scenario import ChannelSet, SystemParams, generate_scenario


def make_instance(B=2, M=2, K=2, seed=0, **overrides):
    params = SystemParams(num_bs=B, antennas_per_bs=M, num_users=K, **overrides)
    return Instance(params, generate_scenario(params, seed))


def single_link_instance(h, power=1.0, noise=0.01, cap=3.0, sinr_target=1.0):
    """One BS, one user, unit-bandwidth instance built from a raw channel."""
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    params = SystemParams(num_bs=1, antennas_per_bs=h.shape[1], num_users=1,
                          power_budget=power, backhaul_cap=cap,
                          sinr_target=sinr_target, bandwidth=1.0,
                          noise_density=noise)
    return Instance(params, ChannelSet(h=h, num_bs=1, antennas_per_bs=h.shape[1]))


@pytest.fixture
def tiny():
    return make_instance(2, 2, 2, seed=0, backhaul_cap=5.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one verdict line per acceptance criterion, shown after the run
CRITERIA_LINES = {}


def report_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA_LINES):
            terminalreporter.write_line(CRITERIA_LINES[n])
