"""On-grid direct-path and RIS-path dictionaries for the matched filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal_model import ArrayConfig, ProbingSet, WaveformConfig, steering_vector, tx_products


@dataclass(frozen=True)
class AngleGrid:
    """Uniform angle grid starting at -pi/2 with step pi/(G-1).

    The last point is +pi/2; with half-wavelength spacing it aliases the
    first one, which the argmax tie-break resolves toward -pi/2.
    """

    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("grid size must be >= 2")

    @property
    def spacing(self) -> float:
        return np.pi / (self.size - 1)

    @property
    def angles(self) -> np.ndarray:
        return -np.pi / 2 + np.arange(self.size) * self.spacing

    def nearest_index(self, theta: float) -> int:
        return int(np.argmin(np.abs(self.angles - theta)))


@dataclass(frozen=True)
class PathDictionary:
    atoms: np.ndarray  # [N, G, N_s*N_r], k-major then antenna
    atom_norms: np.ndarray  # [N, G], squared norms

    def column(self, n: int, m: int) -> np.ndarray:
        return self.atoms[n, m]


def _finish(blocks: np.ndarray) -> PathDictionary:
    # blocks: [N, N_s, G, N_r] -> [N, G, N_s*N_r]
    n, ns, g, nr = blocks.shape
    atoms = np.ascontiguousarray(blocks.transpose(0, 2, 1, 3)).reshape(n, g, ns * nr)
    atoms.setflags(write=False)
    norms = np.einsum("ngj,ngj->ng", atoms.conj(), atoms).real
    norms.setflags(write=False)
    return PathDictionary(atoms=atoms, atom_norms=norms)


def build_direct_dictionary(grid: AngleGrid, probing: ProbingSet, arrays: ArrayConfig,
                            waveform: WaveformConfig) -> PathDictionary:
    dl = arrays.spacing_over_lambda
    theta = grid.angles
    u_rx = np.sqrt(arrays.n_rx) * steering_vector(theta + np.pi, arrays.n_rx, dl)  # [G, N_r]
    u_tx = np.sqrt(arrays.n_tx) * steering_vector(theta, arrays.n_tx, dl)  # [G, N_t]
    s = probing.precoders @ u_tx.conj().T  # [N, N_s, G]
    return _finish(s[..., None] * u_rx)


def build_ris_dictionary(grid: AngleGrid, theta_br: float, theta_rb: float,
                         probing: ProbingSet, arrays: ArrayConfig,
                         waveform: WaveformConfig) -> PathDictionary:
    dl = arrays.spacing_over_lambda
    u_rx = np.sqrt(arrays.n_rx) * steering_vector(theta_rb, arrays.n_rx, dl)  # [N_r]
    s = tx_products(theta_br, probing.precoders, dl)  # [N, N_s]
    m = arrays.m_ris
    w = np.conj(steering_vector(theta_rb, m, dl)) * probing.ris_phases  # [N, N_s, M]
    b = (w @ steering_vector(grid.angles, m, dl).T) ** 2  # [N, N_s, G]
    return _finish((s[..., None] * b)[..., None] * u_rx)

