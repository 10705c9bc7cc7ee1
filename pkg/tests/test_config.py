import pytest

from risloc.config import (KEYS, ConfigError, ExperimentConfig, desk_profile, load_config,
                           paper_profile, parse_config_text)

FULL = """
# every supported key
bs_x = 0
bs_y = 0.5
ris_x = 5
ris_y = 6
n_tx = 4
n_rx = 6
m_ris = 10
n_subcarriers = 12
n_snapshots = 3
sample_rate_mhz = 60
c_m_per_us = 300
grid_size = 361
snr_db_list = -10, 0, 10
trials = 7
master_seed = 99
k_outer = 6
k_inner = 4
mu = 0.001
gain_mag_dir = 1.0
gain_mag_ris = 0.5
target_mode = uniform
target_rect = 6, 14, 1, 6
methods = coarse-only, proposed
output_dir = out/here
"""


def test_profiles():
    d, p = desk_profile(), paper_profile()
    assert (d.scenario.arrays.n_tx, d.scenario.arrays.m_ris, d.scenario.waveform.n_subcarriers) == (8, 8, 8)
    assert d.trials == 100 and d.grid_size == 181
    assert d.scenario.waveform.ambiguity_window == pytest.approx(0.2)
    a, w = p.scenario.arrays, p.scenario.waveform
    assert (a.n_tx, a.n_rx, a.m_ris, w.n_subcarriers, w.n_snapshots, w.sample_rate) == (32, 32, 32, 20, 32, 100.0)
    assert p.trials == 1000
    assert tuple(p.scenario.p_r) == (5.0, 5.0)


def test_full_parse():
    cfg = parse_config_text(FULL)
    assert cfg.scenario.p_b.y == 0.5 and cfg.scenario.p_r.y == 6.0
    assert cfg.scenario.arrays.m_ris == 10 and cfg.scenario.waveform.sample_rate == 60.0
    assert cfg.snr_db_list == (-10.0, 0.0, 10.0)
    assert cfg.solver.k_outer == 6 and cfg.solver.damping_mu == 0.001
    assert cfg.methods == ("coarse", "proposed")
    assert cfg.output_dir == "out/here" and cfg.master_seed == 99 and cfg.gain_mag_ris == 0.5
    assert set(KEYS) == {line.split("=")[0].strip() for line in FULL.splitlines() if "=" in line}


def test_fixed_target_and_file(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("target_mode = fixed\ntarget_rect = 9, 2\n")
    cfg = load_config(f)
    assert cfg.fixed_target == (9.0, 2.0)
    assert desk_profile().fixed_target is None


@pytest.mark.parametrize("text", [
    "unknown_key = 1",
    "trials = 0",
    "trials = many",
    "snr_db_list = ",
    "methods = coarse, magic",
    "target_mode = fixed",
    "target_rect = 1, 2, 3",
    "target_rect = 6, 1, 1, 6",
    "target_mode = spiral",
    "grid_size = 1",
    "k_inner = 0",
    "mu = -1",
    "no equals sign",
    "trials = 3\ntrials = 4",
])
def test_rejects(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_digest_ignores_output_dir():
    a = desk_profile()
    assert a.digest() == a.with_overrides(output_dir="elsewhere").digest()
    assert a.digest() != a.with_overrides(master_seed=1).digest()
    assert isinstance(a, ExperimentConfig)
