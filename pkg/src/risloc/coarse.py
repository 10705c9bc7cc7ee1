"""Stage-1 estimator: sequential matched filter, per-subcarrier gains,
successive cancellation and phase-slope delay recovery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dictionary import AngleGrid, PathDictionary
from .geometry import Position2D
from .signal_model import MeasurementSet, Scenario, WaveformConfig

D_RT_FLOOR = 1e-3  # meters
LOW_CONFIDENCE_RATIO = 1e-10


class DegenerateDictionaryError(ValueError):
    """Raised when a dictionary column has zero energy."""


@dataclass(frozen=True)
class PathCoarseEstimate:
    grid_index: int
    angle: float
    per_subcarrier_gains: np.ndarray
    delay: float
    two_way_distance: float
    peak_score: float


@dataclass(frozen=True)
class CoarseEstimate:
    direct: PathCoarseEstimate
    ris: PathCoarseEstimate
    d_bt: float
    d_rt: float
    initial_position: Position2D
    initial_gains: tuple[complex, complex]
    d_rt_clamped: bool = False
    ris_low_confidence: bool = False


def residual_matrix(blocks: np.ndarray) -> np.ndarray:
    """``[N, N_s, N_r]`` blocks -> ``[N, N_s*N_r]`` per-subcarrier columns."""
    n = blocks.shape[0]
    return blocks.reshape(n, -1)


def _check_norms(dictionary: PathDictionary, index=None):
    norms = dictionary.atom_norms if index is None else dictionary.atom_norms[:, index]
    if np.any(norms <= 0.0):
        raise DegenerateDictionaryError("dictionary contains a zero-energy atom")


def matched_filter_select(residual: np.ndarray, dictionary: PathDictionary):
    """Grid index maximising the normalized correlation summed over subcarriers.

    Returns
    -------
    index : int
        Smallest index attaining the maximum score.
    scores : ndarray, shape (G,)
    """
    if residual.shape != (dictionary.atoms.shape[0], dictionary.atoms.shape[2]):
        raise ValueError(f"residual shape {residual.shape} does not match dictionary")
    _check_norms(dictionary)
    corr = np.einsum("ngj,nj->ng", dictionary.atoms.conj(), residual)
    scores = np.sum(np.abs(corr) ** 2 / dictionary.atom_norms, axis=0)
    return int(np.argmax(scores)), scores


def per_subcarrier_gains(residual: np.ndarray, dictionary: PathDictionary, index: int) -> np.ndarray:
    _check_norms(dictionary, index)
    atoms = dictionary.atoms[:, index, :]
    return np.einsum("nj,nj->n", atoms.conj(), residual) / dictionary.atom_norms[:, index]


def cancel_path(residual: np.ndarray, dictionary: PathDictionary, index: int,
                gains: np.ndarray) -> np.ndarray:
    return residual - dictionary.atoms[:, index, :] * gains[:, None]


def estimate_delay(gains: np.ndarray, waveform: WaveformConfig) -> float:
    """Delay from the phase slope of per-subcarrier gains.

    Adjacent phase differences are wrapped to (-pi, pi] and averaged. The
    wrapped differences are first re-centred on their circular mean so a
    slope near +-pi does not split across the branch cut; without noise
    this is the plain average. The result is reduced into
    ``[0, N*T_s)``.
    """
    gains = np.asarray(gains)
    n = gains.shape[0]
    if n < 2:
        raise ValueError("delay estimation needs at least two subcarriers")
    dphi = np.angle(gains[1:] * np.conj(gains[:-1]))
    centre = np.angle(np.sum(np.exp(1j * dphi)))
    dphi = centre + np.angle(np.exp(1j * (dphi - centre)))
    window = waveform.ambiguity_window
    tau = -window / (2.0 * np.pi) * np.mean(dphi)
    tau = float(np.mod(tau, window))
    return 0.0 if tau == window else tau


def _path_estimate(residual, dictionary, grid, waveform):
    index, scores = matched_filter_select(residual, dictionary)
    gains = per_subcarrier_gains(residual, dictionary, index)
    tau = estimate_delay(gains, waveform)
    est = PathCoarseEstimate(grid_index=index, angle=float(grid.angles[index]),
                             per_subcarrier_gains=gains, delay=tau,
                             two_way_distance=waveform.c * tau,
                             peak_score=float(scores[index]))
    return est, index, gains


def _derotated_gain(est: PathCoarseEstimate, waveform: WaveformConfig) -> complex:
    return complex(np.mean(est.per_subcarrier_gains * np.exp(1j * waveform.omega * est.delay)))


def coarse_estimate(measurement: MeasurementSet, direct_dict: PathDictionary,
                    ris_dict: PathDictionary, grid: AngleGrid, scenario: Scenario,
                    fuse_ris: bool = False, ris_weight: float = 0.5) -> CoarseEstimate:
    """Run the coarse stage: direct path first, then RIS on the residual.

    The initial position is the direct-path fix
    ``p_B + d_BT [cos theta_BT, sin theta_BT]``. With ``fuse_ris`` it is
    blended with the RIS fix using weight ``ris_weight``.
    """
    wf = scenario.waveform
    r = residual_matrix(measurement.blocks)
    direct, d_idx, d_gains = _path_estimate(r, direct_dict, grid, wf)
    r = cancel_path(r, direct_dict, d_idx, d_gains)
    ris, _, _ = _path_estimate(r, ris_dict, grid, wf)

    d_bt = direct.two_way_distance / 2.0
    d_rt = ris.two_way_distance / 2.0 - scenario.d_br
    clamped = d_rt < D_RT_FLOOR
    if clamped:
        d_rt = D_RT_FLOOR

    p0 = np.asarray(scenario.p_b, float) + d_bt * np.array([np.cos(direct.angle), np.sin(direct.angle)])
    if fuse_ris:
        p_ris = np.asarray(scenario.p_r, float) + d_rt * np.array([np.cos(ris.angle), np.sin(ris.angle)])
        p0 = (1.0 - ris_weight) * p0 + ris_weight * p_ris

    low_conf = ris.peak_score <= LOW_CONFIDENCE_RATIO * max(direct.peak_score, np.finfo(float).tiny)
    return CoarseEstimate(
        direct=direct, ris=ris, d_bt=d_bt, d_rt=d_rt,
        initial_position=Position2D(float(p0[0]), float(p0[1])),
        initial_gains=(_derotated_gain(direct, wf), _derotated_gain(ris, wf)),
        d_rt_clamped=bool(clamped), ris_low_confidence=bool(low_conf),
    )
