import math

import numpy as np
import pytest

from risloc.dictionary import AngleGrid
from risloc.signal_model import ArrayConfig, ChannelParams, Scenario, WaveformConfig, generate_probing


def small_scenario(n_tx=4, n_rx=3, m_ris=5, n=6, ns=3, rs=30.0):
    return Scenario(arrays=ArrayConfig(n_tx=n_tx, n_rx=n_rx, m_ris=m_ris),
                    waveform=WaveformConfig(n_subcarriers=n, n_snapshots=ns, sample_rate=rs))


def desk_scenario():
    return Scenario(arrays=ArrayConfig(8, 8, 8), waveform=WaveformConfig(8, 8, 40.0))


def on_grid_target(scenario, grid, i_bt, i_rt):
    """Target where the BS ray at grid angle i_bt meets the RIS ray at grid angle i_rt."""
    a, b = grid.angles[i_bt], grid.angles[i_rt]
    A = np.array([[math.cos(a), -math.cos(b)], [math.sin(a), -math.sin(b)]])
    t, _ = np.linalg.solve(A, np.subtract(scenario.p_r, scenario.p_b))
    return (scenario.p_b[0] + t * math.cos(a), scenario.p_b[1] + t * math.sin(a))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small():
    return small_scenario()


@pytest.fixture
def small_probing(small, rng):
    return generate_probing(small.arrays, small.waveform, rng)


@pytest.fixture
def small_params(small):
    return ChannelParams.from_position((9.0, 2.5), small, 0.8 * np.exp(0.4j), 0.6 * np.exp(-1.3j))


@pytest.fixture
def grid181():
    return AngleGrid(181)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
