"""Fisher information, position error bound and per-path additivity.

The channel parameters are taken in the real parameterization

    (theta_bt, tau_d, Re g_d, Im g_d, theta_rt, tau_r, Re g_r, Im g_r)

and the noise is circular complex Gaussian with covariance sigma^2 I, so
the FIM entries are (2/sigma^2) Re{(d mu/d eta_i)^H (d mu/d eta_j)}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryJacobian
from .refine import atom_basis
from .signal_model import ChannelParams, ProbingSet, Scenario

LABELS = ("theta_bt", "tau_d", "re_g_d", "im_g_d", "theta_rt", "tau_r", "re_g_r", "im_g_r")
GEOMETRIC = [0, 1, 4, 5]
NUISANCE = [2, 3, 6, 7]
PATH_INDEX = {"direct": [0, 1, 2, 3], "ris": [4, 5, 6, 7]}
SINGULAR_COND = 1e12


@dataclass(frozen=True)
class FisherMatrix:
    matrix: np.ndarray
    labels: tuple[str, ...] = LABELS


@dataclass(frozen=True)
class PositionBound:
    fim_position: np.ndarray
    peb: float
    form: str
    singular: bool = False


@dataclass
class AdditivityReport:
    position_fims: list[np.ndarray]
    summed_position_fim: np.ndarray
    joint_position_fim: np.ndarray
    additivity_error: float
    prefix_pebs: list[float]
    monotone: bool
    notes: list[str] = field(default_factory=list)


def mean_derivatives(params: ChannelParams, scenario: Scenario, probing: ProbingSet) -> np.ndarray:
    """d mu / d eta for the eight real parameters, shape ``(8, L)``."""
    B = atom_basis(params.theta_bt, params.tau_d, params.theta_rt, params.tau_r, scenario, probing)
    g_d, g_r = params.g_d, params.g_r
    return np.stack([B[1] * g_d, B[2] * g_d, B[0], 1j * B[0],
                     B[4] * g_r, B[5] * g_r, B[3], 1j * B[3]])


def fim_channel(params: ChannelParams, scenario: Scenario, probing: ProbingSet, noise_sigma: float,
                paths=("direct", "ris")) -> FisherMatrix:
    """FIM of the channel parameters.

    ``paths`` restricts the mean to a subset of the echoes; parameters of
    an excluded path then carry zero information.
    """
    if not noise_sigma > 0:
        raise ValueError("noise_sigma must be > 0 for a Fisher information matrix")
    D = mean_derivatives(params, scenario, probing)
    keep = sorted(i for path in paths for i in PATH_INDEX[path])
    mask = np.zeros(8, dtype=bool)
    mask[keep] = True
    D[~mask] = 0.0
    J = (2.0 / noise_sigma ** 2) * (D.conj() @ D.T).real
    return FisherMatrix(matrix=0.5 * (J + J.T))


def transformation_matrix(geo_jac: GeometryJacobian) -> np.ndarray:
    """d eta / d(x, y), shape ``(8, 2)``; gain rows are zero."""
    T = np.zeros((8, 2))
    T[GEOMETRIC] = geo_jac.as_matrix()
    return T


def _position_fim(J: np.ndarray, geo_jac: GeometryJacobian, form: str) -> np.ndarray:
    T = transformation_matrix(geo_jac)
    if form == "direct":
        return T.T @ J @ T
    if form == "schur":
        Tg = T[GEOMETRIC]
        J_gg = J[np.ix_(GEOMETRIC, GEOMETRIC)]
        J_gn = J[np.ix_(GEOMETRIC, NUISANCE)]
        J_nn = J[np.ix_(NUISANCE, NUISANCE)]
        # pinv: an absent path contributes an all-zero nuisance block
        efim = J_gg - J_gn @ np.linalg.pinv(J_nn, hermitian=True) @ J_gn.T
        return Tg.T @ efim @ Tg
    raise ValueError(f"unknown form {form!r}")


def peb_from_position_fim(jp: np.ndarray) -> tuple[float, bool]:
    jp = 0.5 * (jp + jp.T)
    eig = np.linalg.eigvalsh(jp)
    if eig[0] <= 0 or eig[-1] / eig[0] > SINGULAR_COND:
        return float("inf"), True
    return float(np.sqrt(np.trace(np.linalg.inv(jp)))), False


def position_bound(fim: FisherMatrix, geo_jac: GeometryJacobian, form: str = "schur") -> PositionBound:
    """Position-domain FIM and PEB = sqrt(tr(J_pos^-1)).

    ``form="direct"`` is T^T J T with zero gain rows in T. ``form="schur"``
    first marginalizes the unknown gains (Schur complement), which is the
    bound for an estimator that does not know the gains. A singular
    position FIM yields ``peb = inf`` and ``singular=True``.
    """
    jp = _position_fim(fim.matrix, geo_jac, form)
    peb, singular = peb_from_position_fim(jp)
    return PositionBound(fim_position=jp, peb=peb, form=form, singular=singular)


def path_fims(params, scenario, probing, noise_sigma) -> list[FisherMatrix]:
    return [fim_channel(params, scenario, probing, noise_sigma, paths=(p,)) for p in ("direct", "ris")]


def peb_additivity_check(per_path_fims, geo_jacs, form: str = "schur",
                         tol: float = 1e-9) -> AdditivityReport:
    """Check that position information adds across independent paths.

    Compares the position FIM of the summed channel FIM against the sum of
    per-path position FIMs, and reports the PEB of every prefix
    ``paths[:r]``, which must be non-increasing.
    """
    fims = list(per_path_fims)
    if not fims:
        raise ValueError("need at least one path")
    jacs = list(geo_jacs) if isinstance(geo_jacs, (list, tuple)) else [geo_jacs] * len(fims)
    per = [_position_fim(f.matrix, j, form) for f, j in zip(fims, jacs)]
    summed = np.sum(per, axis=0)
    notes = []
    if all(j == jacs[0] for j in jacs):
        joint = _position_fim(np.sum([f.matrix for f in fims], axis=0), jacs[0], form)
    else:
        joint = summed
        notes.append("paths use different transformations; joint FIM taken as the sum")
    scale = max(np.max(np.abs(summed)), np.finfo(float).tiny)
    err = float(np.max(np.abs(joint - summed)) / scale)
    if err > tol:
        notes.append(f"additivity error {err:.3e} exceeds {tol:.0e}")

    pebs = [peb_from_position_fim(np.sum(per[:r], axis=0))[0] for r in range(1, len(per) + 1)]
    monotone = all(b <= a * (1 + 1e-12) for a, b in zip(pebs, pebs[1:]))
    return AdditivityReport(position_fims=per, summed_position_fim=summed,
                            joint_position_fim=joint, additivity_error=err,
                            prefix_pebs=pebs, monotone=monotone, notes=notes)
