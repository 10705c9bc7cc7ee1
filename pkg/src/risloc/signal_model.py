"""Steering vectors, probing sequences, RIS cascades and dual-path echoes.

All echo tensors are laid out ``[N, N_s, N_r]``: subcarrier, snapshot,
receive antenna.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Position2D, angle_from, geometric_params


class ZeroSignalError(ValueError):
    """Raised when an SNR is requested for an identically zero signal."""


@dataclass(frozen=True)
class ArrayConfig:
    n_tx: int = 32
    n_rx: int = 32
    m_ris: int = 32
    spacing_over_lambda: float = 0.5

    def __post_init__(self):
        if min(self.n_tx, self.n_rx, self.m_ris) < 1:
            raise ValueError("array sizes must be >= 1")


@dataclass(frozen=True)
class WaveformConfig:
    n_subcarriers: int = 20
    n_snapshots: int = 32
    sample_rate: float = 100.0  # MHz
    c: float = 300.0  # m/us

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.n_snapshots < 1:
            raise ValueError("n_subcarriers and n_snapshots must be >= 1")

    @property
    def ts(self) -> float:
        """Sampling period in microseconds."""
        return 1.0 / self.sample_rate

    @property
    def omega(self) -> np.ndarray:
        """Subcarrier angular frequencies in rad/us."""
        n = np.arange(self.n_subcarriers)
        return 2.0 * np.pi * n / (self.n_subcarriers * self.ts)

    @property
    def ambiguity_window(self) -> float:
        """Largest unambiguous two-way delay N*T_s in microseconds."""
        return self.n_subcarriers * self.ts


@dataclass(frozen=True)
class Scenario:
    """Fixed BS/RIS placement plus array and waveform settings."""

    p_b: Position2D = Position2D(0.0, 0.0)
    p_r: Position2D = Position2D(5.0, 5.0)
    arrays: ArrayConfig = field(default_factory=ArrayConfig)
    waveform: WaveformConfig = field(default_factory=WaveformConfig)

    @property
    def theta_br(self) -> float:
        return angle_from(self.p_b, self.p_r)

    @property
    def theta_rb(self) -> float:
        return angle_from(self.p_r, self.p_b)

    @property
    def d_br(self) -> float:
        return float(np.hypot(self.p_r[0] - self.p_b[0], self.p_r[1] - self.p_b[1]))

    @property
    def stacked_length(self) -> int:
        w = self.waveform
        return self.arrays.n_rx * w.n_snapshots * w.n_subcarriers


@dataclass(frozen=True)
class ProbingSet:
    precoders: np.ndarray  # [N, N_s, N_t]
    ris_phases: np.ndarray  # [N, N_s, M], diagonal of Phi_{n,k}


@dataclass(frozen=True)
class ChannelParams:
    theta_bt: float
    tau_d: float
    g_d: complex
    theta_rt: float
    tau_r: float
    g_r: complex

    @classmethod
    def from_position(cls, p_t, scenario: Scenario, g_d: complex, g_r: complex):
        geo = geometric_params(p_t, scenario.p_b, scenario.p_r, scenario.waveform.c)
        return cls(geo.theta_bt, geo.tau_d, complex(g_d), geo.theta_rt, geo.tau_r, complex(g_r))


@dataclass(frozen=True)
class MeasurementSet:
    blocks: np.ndarray  # [N, N_s, N_r]
    probing: ProbingSet
    noise_sigma: float


def steering_vector(theta, n_ant: int, spacing_over_lambda: float = 0.5) -> np.ndarray:
    """Unit-norm ULA response; trailing axis is the antenna index."""
    i = np.arange(n_ant)
    phase = np.multiply.outer(np.sin(theta), i)
    return np.exp(-2j * np.pi * spacing_over_lambda * phase) / np.sqrt(n_ant)


def steering_derivative(theta, n_ant: int, spacing_over_lambda: float = 0.5) -> np.ndarray:
    """Elementwise d/dtheta of :func:`steering_vector`."""
    i = np.arange(n_ant)
    a = steering_vector(theta, n_ant, spacing_over_lambda)
    return a * (-2j * np.pi * spacing_over_lambda * np.multiply.outer(np.cos(theta), i))


def ris_inner(theta, theta_rb: float, ris_phases: np.ndarray, spacing_over_lambda: float = 0.5):
    """a_RIS(theta_rb)^H Phi a_RIS(theta) for every phase row in ``ris_phases``."""
    m = ris_phases.shape[-1]
    w = np.conj(steering_vector(theta_rb, m, spacing_over_lambda)) * ris_phases
    return w @ steering_vector(theta, m, spacing_over_lambda)


def ris_cascade_gain(theta, theta_rb: float, ris_phase_row, spacing_over_lambda: float = 0.5):
    """Round-trip RIS cascade b(theta): the single-pass inner product squared."""
    ris_phase_row = np.asarray(ris_phase_row)
    return ris_inner(theta, theta_rb, ris_phase_row, spacing_over_lambda) ** 2


def tx_products(theta, precoders: np.ndarray, spacing_over_lambda: float = 0.5) -> np.ndarray:
    """sqrt(N_t) a_t(theta)^H f_{n,k}, shape ``precoders.shape[:-1]``."""
    n_tx = precoders.shape[-1]
    u = np.sqrt(n_tx) * steering_vector(theta, n_tx, spacing_over_lambda)
    return precoders @ np.conj(u)


def delay_phasor(tau: float, waveform: WaveformConfig) -> np.ndarray:
    return np.exp(-1j * waveform.omega * tau)


def direct_blocks(theta_bt, tau_d, probing: ProbingSet, arrays: ArrayConfig,
                  waveform: WaveformConfig) -> np.ndarray:
    """Unit-gain direct echo, ``[N, N_s, N_r]``."""
    dl = arrays.spacing_over_lambda
    u_rx = np.sqrt(arrays.n_rx) * steering_vector(theta_bt + np.pi, arrays.n_rx, dl)
    s = tx_products(theta_bt, probing.precoders, dl) * delay_phasor(tau_d, waveform)[:, None]
    return s[..., None] * u_rx


def ris_blocks(theta_rt, tau_r, theta_br, theta_rb, probing: ProbingSet,
               arrays: ArrayConfig, waveform: WaveformConfig) -> np.ndarray:
    """Unit-gain RIS echo, ``[N, N_s, N_r]``."""
    dl = arrays.spacing_over_lambda
    u_rx = np.sqrt(arrays.n_rx) * steering_vector(theta_rb, arrays.n_rx, dl)
    s = tx_products(theta_br, probing.precoders, dl)
    b = ris_cascade_gain(theta_rt, theta_rb, probing.ris_phases, dl)
    s = s * b * delay_phasor(tau_r, waveform)[:, None]
    return s[..., None] * u_rx


def synthesize_direct_echo(params: ChannelParams, probing: ProbingSet, arrays: ArrayConfig,
                           waveform: WaveformConfig) -> np.ndarray:
    return params.g_d * direct_blocks(params.theta_bt, params.tau_d, probing, arrays, waveform)


def synthesize_ris_echo(params: ChannelParams, theta_br: float, theta_rb: float,
                        probing: ProbingSet, arrays: ArrayConfig,
                        waveform: WaveformConfig) -> np.ndarray:
    return params.g_r * ris_blocks(params.theta_rt, params.tau_r, theta_br, theta_rb,
                                   probing, arrays, waveform)


def noiseless_measurement(params, theta_br, theta_rb, probing, arrays, waveform) -> np.ndarray:
    return (synthesize_direct_echo(params, probing, arrays, waveform)
            + synthesize_ris_echo(params, theta_br, theta_rb, probing, arrays, waveform))


def synthesize_measurement(params: ChannelParams, theta_br: float, theta_rb: float,
                           probing: ProbingSet, arrays: ArrayConfig, waveform: WaveformConfig,
                           noise_sigma: float, rng: np.random.Generator) -> MeasurementSet:
    """Noisy dual-path measurement.

    The noise is circularly-symmetric complex Gaussian with per-entry
    variance ``noise_sigma**2``. A unit-variance draw is always taken and
    then scaled, so a fixed ``rng`` state yields the same noise shape for
    every ``noise_sigma``.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    clean = noiseless_measurement(params, theta_br, theta_rb, probing, arrays, waveform)
    z = rng.standard_normal((2,) + clean.shape)
    z = (z[0] + 1j * z[1]) * (noise_sigma / np.sqrt(2.0))
    return MeasurementSet(blocks=clean + z, probing=probing, noise_sigma=float(noise_sigma))


def generate_probing(arrays: ArrayConfig, waveform: WaveformConfig,
                     rng: np.random.Generator) -> ProbingSet:
    """Random unit-modulus precoders and RIS phases, i.i.d. over all indices."""
    n, ns = waveform.n_subcarriers, waveform.n_snapshots
    u = rng.random((n, ns, arrays.n_tx))
    phi = rng.uniform(0.0, 2.0 * np.pi, (n, ns, arrays.m_ris))
    return ProbingSet(precoders=np.exp(2j * np.pi * u), ris_phases=np.exp(1j * phi))


def snr_to_sigma(snr_db: float, params: ChannelParams, probing: ProbingSet, arrays: ArrayConfig,
                 waveform: WaveformConfig, theta_br: float, theta_rb: float) -> float:
    """Per-entry noise std for a per-entry average SNR of ``snr_db``."""
    clean = noiseless_measurement(params, theta_br, theta_rb, probing, arrays, waveform)
    power = float(np.mean(np.abs(clean) ** 2))
    if power == 0.0:
        raise ZeroSignalError("noiseless signal is identically zero")
    return float(np.sqrt(power / 10.0 ** (snr_db / 10.0)))
