"""Experiment configuration: built-in profiles and flat key-value files.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment. Lists are comma separated. Keys not listed in ``KEYS`` are
rejected.

    snr_db_list = -10, 0, 10, 20
    methods = coarse, proposed, cdgd
    target_mode = uniform
    target_rect = 6, 14, 1, 6      # x_min, x_max, y_min, y_max
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .geometry import Position2D
from .refine import SolverConfig
from .signal_model import ArrayConfig, Scenario, WaveformConfig

METHODS = ("coarse", "proposed", "cdgd")
METHOD_ALIASES = {"coarse-only": "coarse", "coarse_only": "coarse"}


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario = field(default_factory=Scenario)
    grid_size: int = 181
    snr_db_list: tuple[float, ...] = (-20.0, -10.0, 0.0, 10.0, 20.0, 30.0)
    trials: int = 1000
    master_seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    methods: tuple[str, ...] = METHODS
    target_mode: str = "uniform"  # "uniform" | "fixed"
    target_rect: tuple[float, ...] = (6.0, 14.0, 1.0, 6.0)
    gain_mag_dir: float = 1.0
    gain_mag_ris: float = 1.0
    output_dir: str = "results"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.snr_db_list:
            raise ConfigError("snr_db_list must be non-empty")
        if self.grid_size < 2:
            raise ConfigError("grid_size must be >= 2")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}")
        if self.target_mode == "uniform":
            if len(self.target_rect) != 4:
                raise ConfigError("uniform target_rect needs x_min, x_max, y_min, y_max")
            x0, x1, y0, y1 = self.target_rect
            if not (x0 <= x1 and y0 <= y1):
                raise ConfigError("target_rect bounds are inverted")
        elif self.target_mode == "fixed":
            if len(self.target_rect) != 2:
                raise ConfigError("fixed target_rect needs x, y")
        else:
            raise ConfigError(f"unknown target_mode {self.target_mode!r}")

    @property
    def fixed_target(self) -> Position2D | None:
        if self.target_mode != "fixed":
            return None
        return Position2D(*self.target_rect)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Stable hash of every setting except the output location."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def desk_profile() -> ExperimentConfig:
    # 40 MHz keeps N*T_s = 0.2 us with 8 subcarriers, the same unambiguous
    # two-way window as the full-size waveform.
    scenario = Scenario(arrays=ArrayConfig(n_tx=8, n_rx=8, m_ris=8),
                        waveform=WaveformConfig(n_subcarriers=8, n_snapshots=8, sample_rate=40.0))
    return ExperimentConfig(scenario=scenario, grid_size=181, trials=100)


def paper_profile() -> ExperimentConfig:
    return ExperimentConfig(scenario=Scenario(), grid_size=181, trials=1000)


PROFILES = {"desk": desk_profile, "paper": paper_profile}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def parse_methods(text: str) -> tuple[str, ...]:
    out = []
    for t in text.split(","):
        t = t.strip().lower()
        if t:
            out.append(METHOD_ALIASES.get(t, t))
    return tuple(out)


# key -> (section, field, parser)
KEYS = {
    "bs_x": ("p_b", 0, float), "bs_y": ("p_b", 1, float),
    "ris_x": ("p_r", 0, float), "ris_y": ("p_r", 1, float),
    "n_tx": ("arrays", "n_tx", int), "n_rx": ("arrays", "n_rx", int),
    "m_ris": ("arrays", "m_ris", int),
    "n_subcarriers": ("waveform", "n_subcarriers", int),
    "n_snapshots": ("waveform", "n_snapshots", int),
    "sample_rate_mhz": ("waveform", "sample_rate", float),
    "c_m_per_us": ("waveform", "c", float),
    "grid_size": ("top", "grid_size", int),
    "snr_db_list": ("top", "snr_db_list", _floats),
    "trials": ("top", "trials", int),
    "master_seed": ("top", "master_seed", int),
    "k_outer": ("solver", "k_outer", int), "k_inner": ("solver", "k_inner", int),
    "mu": ("solver", "damping_mu", float),
    "gain_mag_dir": ("top", "gain_mag_dir", float),
    "gain_mag_ris": ("top", "gain_mag_ris", float),
    "target_mode": ("top", "target_mode", lambda s: s.strip().lower()),
    "target_rect": ("top", "target_rect", _floats),
    "methods": ("top", "methods", parse_methods),
    "output_dir": ("top", "output_dir", str.strip),
}


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or desk_profile()
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = KEYS[key][2](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return apply_values(base, values)


def apply_values(base: ExperimentConfig, values: dict) -> ExperimentConfig:
    sc = base.scenario
    p_b, p_r = list(sc.p_b), list(sc.p_r)
    sections = {"arrays": {}, "waveform": {}, "solver": {}, "top": {}}
    for key, val in values.items():
        section, name, _ = KEYS[key]
        if section == "p_b":
            p_b[name] = val
        elif section == "p_r":
            p_r[name] = val
        else:
            sections[section][name] = val
    try:
        scenario = Scenario(p_b=Position2D(*p_b), p_r=Position2D(*p_r),
                            arrays=replace(sc.arrays, **sections["arrays"]),
                            waveform=replace(sc.waveform, **sections["waveform"]))
        solver = replace(base.solver, **sections["solver"])
        return replace(base, scenario=scenario, solver=solver, **sections["top"])
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(), base)
