"""Stage-2 joint gain/position refinement.

The model ``y ~ phi_d(p) g_d + phi_r(p) g_r`` is linear in the gains and
nonlinear in the position. :func:`refine_proposed` eliminates the gains
by a 2x2 least-squares solve and updates the position with damped
Levenberg steps on atoms linearized around an outer-loop base point.
:func:`refine_baseline_cdgd` is the conventional scheme: coordinate
descent on the gains and gradient descent on the position, rebuilding
exact atoms every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import zherk

from .coarse import CoarseEstimate
from .geometry import (DegenerateGeometryError, GeometricParams, GeometryJacobian, Position2D,
                       geometric_params, geometry_jacobian)
from .signal_model import (MeasurementSet, ProbingSet, Scenario, ris_inner, steering_derivative,
                           steering_vector, tx_products)

GRAM_COND_LIMIT = 1e12
MU_MIN, MU_MAX = 1e-8, 1e8
ARMIJO_C = 1e-4
MAX_BACKTRACKS = 20


class SingularGramError(np.linalg.LinAlgError):
    """The two sensing atoms are (numerically) collinear."""


class RefinementError(RuntimeError):
    """A position update became non-finite."""


@dataclass(frozen=True)
class StackedMeasurement:
    y: np.ndarray  # [N*N_s*N_r], subcarrier outer, snapshot, antenna innermost
    shape: tuple[int, int, int]


@dataclass(frozen=True)
class AtomPack:
    """Base atoms and partials, stored as rows of one ``(6, L)`` array.

    Row order: phi_d, d phi_d/d theta_bt, d phi_d/d tau_d, phi_r,
    d phi_r/d theta_rt, d phi_r/d tau_r.
    """

    basis: np.ndarray
    base_point: Position2D
    base_geometry: GeometricParams

    phi_d = property(lambda self: self.basis[0])
    d_phi_d_dtheta = property(lambda self: self.basis[1])
    d_phi_d_dtau = property(lambda self: self.basis[2])
    phi_r = property(lambda self: self.basis[3])
    d_phi_r_dtheta = property(lambda self: self.basis[4])
    d_phi_r_dtau = property(lambda self: self.basis[5])


@dataclass(frozen=True)
class SolverConfig:
    k_outer: int = 10
    k_inner: int = 5
    damping_mu: float = 1e-2
    damping_adaptation: str = "off"  # "off" | "multiplicative"
    step_tolerance: float = 1e-10  # meters
    cost_tolerance: float = 0.0  # relative change of the exact cost between rebuilds
    baseline_iterations: int | None = None  # defaults to k_outer * k_inner

    def __post_init__(self):
        if self.k_outer < 1 or self.k_inner < 1:
            raise ValueError("k_outer and k_inner must be >= 1")
        if not self.damping_mu > 0:
            raise ValueError("damping_mu must be > 0")
        if self.damping_adaptation not in ("off", "multiplicative"):
            raise ValueError(f"unknown damping adaptation {self.damping_adaptation!r}")

    @property
    def total_inner_steps(self) -> int:
        return self.k_outer * self.k_inner


@dataclass
class RefinementResult:
    position: Position2D
    gains: tuple[complex, complex]
    cost_trace: list[float] = field(default_factory=list)
    exact_cost_trace: list[float] = field(default_factory=list)
    gain_trace: list[tuple[complex, complex]] = field(default_factory=list)
    position_trace: list[Position2D] = field(default_factory=list)
    trace_index: list[tuple[int, int]] = field(default_factory=list)
    step_norms: list[float] = field(default_factory=list)
    outer_count: int = 0
    inner_count: int = 0
    rebuild_count: int = 0
    cost_evaluations: int = 0
    converged: bool = False
    final_cost: float = float("nan")


# --- measurement stacking -------------------------------------------------

def stack(measurement) -> StackedMeasurement:
    blocks = measurement.blocks if isinstance(measurement, MeasurementSet) else np.asarray(measurement)
    return StackedMeasurement(y=blocks.reshape(-1).copy(), shape=tuple(blocks.shape))


def unstack(stacked: StackedMeasurement) -> np.ndarray:
    return stacked.y.reshape(stacked.shape)


def _as_vector(y) -> np.ndarray:
    return y.y if isinstance(y, StackedMeasurement) else np.asarray(y).reshape(-1)


# --- atoms ----------------------------------------------------------------

def _direct_parts(theta, scenario: Scenario, probing: ProbingSet):
    arr = scenario.arrays
    dl = arr.spacing_over_lambda
    u_rx = np.sqrt(arr.n_rx) * steering_vector(theta + np.pi, arr.n_rx, dl)
    s = tx_products(theta, probing.precoders, dl)
    return u_rx, s


def _ris_parts(scenario: Scenario, probing: ProbingSet):
    arr = scenario.arrays
    dl = arr.spacing_over_lambda
    u_rx = np.sqrt(arr.n_rx) * steering_vector(scenario.theta_rb, arr.n_rx, dl)
    s = tx_products(scenario.theta_br, probing.precoders, dl)
    return u_rx, s


def sensing_atoms(p, scenario: Scenario, probing: ProbingSet):
    """Exact unit-gain atoms ``(phi_d, phi_r)`` for a target at ``p``."""
    geo = geometric_params(p, scenario.p_b, scenario.p_r, scenario.waveform.c)
    omega = scenario.waveform.omega
    u_rx, s = _direct_parts(geo.theta_bt, scenario, probing)
    phi_d = ((s * np.exp(-1j * omega * geo.tau_d)[:, None])[..., None] * u_rx).reshape(-1)
    u_rx_r, s_r = _ris_parts(scenario, probing)
    b = ris_inner(geo.theta_rt, scenario.theta_rb, probing.ris_phases,
                  scenario.arrays.spacing_over_lambda) ** 2
    phi_r = ((s_r * b * np.exp(-1j * omega * geo.tau_r)[:, None])[..., None] * u_rx_r).reshape(-1)
    return phi_d, phi_r


def build_atom_pack(p0, scenario: Scenario, probing: ProbingSet) -> AtomPack:
    """Base atoms and their analytic partials w.r.t. angle and delay at ``p0``."""
    geo = geometric_params(p0, scenario.p_b, scenario.p_r, scenario.waveform.c)
    basis = atom_basis(geo.theta_bt, geo.tau_d, geo.theta_rt, geo.tau_r, scenario, probing)
    return AtomPack(basis=basis, base_point=Position2D(float(p0[0]), float(p0[1])),
                    base_geometry=geo)


def atom_basis(theta_bt: float, tau_d: float, theta_rt: float, tau_r: float,
               scenario: Scenario, probing: ProbingSet) -> np.ndarray:
    """Unit-gain atoms and their angle/delay partials as rows of a ``(6, L)`` array."""
    arr = scenario.arrays
    dl = arr.spacing_over_lambda
    omega = scenario.waveform.omega
    jw = (-1j * omega)[:, None, None]
    n, ns, nr = omega.size, scenario.waveform.n_snapshots, arr.n_rx
    out = np.empty((6, n, ns, nr), dtype=complex)

    # direct path: both the receive steering and the transmit product move with theta
    phase_d = np.exp(-1j * omega * tau_d)[:, None]
    u_rx, s = _direct_parts(theta_bt, scenario, probing)
    du_rx = np.sqrt(arr.n_rx) * steering_derivative(theta_bt + np.pi, arr.n_rx, dl)
    du_tx = np.sqrt(arr.n_tx) * steering_derivative(theta_bt, arr.n_tx, dl)
    ds = probing.precoders @ np.conj(du_tx)
    sp = s * phase_d
    np.multiply(sp[..., None], u_rx, out=out[0])
    np.multiply((ds * phase_d)[..., None], u_rx, out=out[1])
    out[1] += sp[..., None] * du_rx
    np.multiply(jw, out[0], out=out[2])

    # RIS path: only the cascade b = v^2 depends on theta_rt
    phase_r = np.exp(-1j * omega * tau_r)[:, None]
    u_rx_r, s_r = _ris_parts(scenario, probing)
    m = arr.m_ris
    w = np.conj(steering_vector(scenario.theta_rb, m, dl)) * probing.ris_phases
    v = w @ steering_vector(theta_rt, m, dl)
    dv = w @ steering_derivative(theta_rt, m, dl)
    sr = s_r * phase_r
    np.multiply((sr * v ** 2)[..., None], u_rx_r, out=out[3])
    np.multiply((sr * 2.0 * v * dv)[..., None], u_rx_r, out=out[4])
    np.multiply(jw, out[3], out=out[5])

    return out.reshape(6, -1)


def _wrap(a: float) -> float:
    return float(np.angle(np.exp(1j * a)))


def linearized_atoms(pack: AtomPack, p, scenario: Scenario):
    """First-order Taylor atoms at ``p`` around the pack's base point."""
    geo = geometric_params(p, scenario.p_b, scenario.p_r, scenario.waveform.c)
    base = pack.base_geometry
    phi_d = (pack.phi_d + pack.d_phi_d_dtheta * _wrap(geo.theta_bt - base.theta_bt)
             + pack.d_phi_d_dtau * (geo.tau_d - base.tau_d))
    phi_r = (pack.phi_r + pack.d_phi_r_dtheta * _wrap(geo.theta_rt - base.theta_rt)
             + pack.d_phi_r_dtau * (geo.tau_r - base.tau_r))
    return phi_d, phi_r


# --- linear algebra pieces ------------------------------------------------

def gram(phi_d: np.ndarray, phi_r: np.ndarray) -> np.ndarray:
    g_dr = np.vdot(phi_d, phi_r)
    return np.array([[np.vdot(phi_d, phi_d), g_dr], [np.conj(g_dr), np.vdot(phi_r, phi_r)]])


def solve_gains(y, phi_d: np.ndarray, phi_r: np.ndarray) -> tuple[complex, complex]:
    """Joint least-squares gains ``(Phi^H Phi)^-1 Phi^H y`` for two atoms."""
    y = _as_vector(y)
    rhs = np.array([np.vdot(phi_d, y), np.vdot(phi_r, y)])
    g = _solve_gram(gram(phi_d, phi_r), rhs)
    return complex(g[0]), complex(g[1])


def _solve_gram(G: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Closed-form solve of a 2x2 Hermitian PSD system with a conditioning guard."""
    a, b, d = G[0, 0].real, G[0, 1], G[1, 1].real
    half_gap = np.hypot(0.5 * (a - d), abs(b))
    lam_max, lam_min = 0.5 * (a + d) + half_gap, 0.5 * (a + d) - half_gap
    if not (np.isfinite(lam_max) and lam_min > lam_max / GRAM_COND_LIMIT):
        raise SingularGramError("sensing atoms are collinear; gain system is singular")
    det = a * d - abs(b) ** 2
    return np.array([d * rhs[0] - b * rhs[1], a * rhs[1] - np.conj(b) * rhs[0]]) / det


def residual(y, phi_d, phi_r, gains) -> np.ndarray:
    return _as_vector(y) - phi_d * gains[0] - phi_r * gains[1]


def nls_cost(y, phi_d, phi_r, gains) -> float:
    e = residual(y, phi_d, phi_r, gains)
    return float(np.vdot(e, e).real)


def position_jacobian(pack: AtomPack, gains, geo_jac: GeometryJacobian):
    """Columns d(y_hat)/dx and d(y_hat)/dy with the gains held fixed."""
    g_d, g_r = gains
    j = geo_jac
    jx = ((pack.d_phi_d_dtheta * j.dtheta_bt_dx + pack.d_phi_d_dtau * j.dtau_d_dx) * g_d
          + (pack.d_phi_r_dtheta * j.dtheta_rt_dx + pack.d_phi_r_dtau * j.dtau_r_dx) * g_r)
    jy = ((pack.d_phi_d_dtheta * j.dtheta_bt_dy + pack.d_phi_d_dtau * j.dtau_d_dy) * g_d
          + (pack.d_phi_r_dtheta * j.dtheta_rt_dy + pack.d_phi_r_dtau * j.dtau_r_dy) * g_r)
    return jx, jy


def levenberg_step(j_x: np.ndarray, j_y: np.ndarray, e: np.ndarray, mu: float) -> np.ndarray:
    """Solve ``(Re{J^H J} + mu I) delta = Re{J^H e}`` for the 2-vector ``delta``."""
    if not mu > 0:
        raise ValueError("mu must be > 0")
    h_xy = np.vdot(j_x, j_y).real
    H = np.array([[np.vdot(j_x, j_x).real + mu, h_xy], [h_xy, np.vdot(j_y, j_y).real + mu]])
    b = np.array([np.vdot(j_x, e).real, np.vdot(j_y, e).real])
    return _solve_spd2(H, b)


def _solve_spd2(H: np.ndarray, b: np.ndarray) -> np.ndarray:
    det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
    return np.array([H[1, 1] * b[0] - H[0, 1] * b[1], H[0, 0] * b[1] - H[1, 0] * b[0]]) / det


# --- solvers --------------------------------------------------------------

def _jacobian_at(pack, gains, p, scenario):
    geo_jac = geometry_jacobian(p, scenario.p_b, scenario.p_r, scenario.waveform.c)
    return position_jacobian(pack, gains, geo_jac)


def _check_finite(p, step, where):
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(step))):
        raise RefinementError(f"non-finite position update in {where}: p={p}, step={step}")


class _ExplicitInner:
    """Inner-loop algebra on full-length linearized atoms, O(L) per step."""

    def __init__(self, pack: AtomPack, y: np.ndarray, scenario: Scenario):
        self.pack, self.y, self.scenario = pack, y, scenario

    def gains_and_cost(self, p):
        phi_d, phi_r = linearized_atoms(self.pack, p, self.scenario)
        gains = solve_gains(self.y, phi_d, phi_r)
        self.e = self.y - phi_d * gains[0] - phi_r * gains[1]
        return gains, float(np.vdot(self.e, self.e).real)

    def step(self, p, gains, mu):
        j_x, j_y = _jacobian_at(self.pack, gains, p, self.scenario)
        return levenberg_step(j_x, j_y, self.e, mu)


class _ProjectedInner:
    """Same inner-loop algebra expressed in the span of the six base vectors.

    Linearized atoms and Jacobian columns are fixed linear combinations of
    (phi_d0, d_d_theta, d_d_tau, phi_r0, d_r_theta, d_r_tau), so every
    inner product the step needs follows from their 6x6 Gram matrix and
    their projections onto ``y``, both formed once per rebuild.
    """

    def __init__(self, pack: AtomPack, y: np.ndarray, scenario: Scenario):
        # zherk gives B B^H, the conjugate of the Gram B^H B; only the upper triangle is filled
        upper = zherk(1.0, pack.basis)
        full = np.triu(upper) + np.triu(upper, 1).conj().T
        self.G6 = full.conj()
        self.q = np.conj(pack.basis @ np.conj(y))
        self.yy = float(np.vdot(y, y).real)
        self.pack, self.scenario = pack, scenario

    def _coeffs(self, p):
        sc = self.scenario
        geo = geometric_params(p, sc.p_b, sc.p_r, sc.waveform.c)
        base = self.pack.base_geometry
        C = np.zeros((6, 2), dtype=complex)
        C[:, 0] = [1.0, _wrap(geo.theta_bt - base.theta_bt), geo.tau_d - base.tau_d, 0, 0, 0]
        C[:, 1] = [0, 0, 0, 1.0, _wrap(geo.theta_rt - base.theta_rt), geo.tau_r - base.tau_r]
        return C

    def gains_and_cost(self, p):
        C = self._coeffs(p)
        G = C.conj().T @ self.G6 @ C
        rhs = C.conj().T @ self.q
        g = _solve_gram(G, rhs)
        self.Cg = C @ g
        cost = self.yy - 2.0 * np.vdot(g, rhs).real + np.vdot(g, G @ g).real
        return (complex(g[0]), complex(g[1])), max(float(cost), 0.0)

    def step(self, p, gains, mu):
        sc = self.scenario
        jac = geometry_jacobian(p, sc.p_b, sc.p_r, sc.waveform.c)
        g_d, g_r = gains
        j = np.zeros((6, 2), dtype=complex)
        j[1:3, 0] = g_d * np.array([jac.dtheta_bt_dx, jac.dtau_d_dx])
        j[4:6, 0] = g_r * np.array([jac.dtheta_rt_dx, jac.dtau_r_dx])
        j[1:3, 1] = g_d * np.array([jac.dtheta_bt_dy, jac.dtau_d_dy])
        j[4:6, 1] = g_r * np.array([jac.dtheta_rt_dy, jac.dtau_r_dy])
        jh = j.conj().T
        H = (jh @ self.G6 @ j).real + mu * np.eye(2)
        b = (jh @ (self.q - self.G6 @ self.Cg)).real
        return _solve_spd2(H, b)


def refine_proposed(y, coarse: CoarseEstimate, scenario: Scenario, probing: ProbingSet,
                    cfg: SolverConfig = SolverConfig(), p_init=None,
                    inner: str = "projected") -> RefinementResult:
    """Linearized Levenberg refinement with joint gain LS.

    Each outer iteration rebuilds the atom pack at the current position;
    each inner iteration re-solves the gains on the linearized atoms and
    takes one damped step. An inner step shorter than
    ``cfg.step_tolerance`` ends the outer iteration; if that happens on
    the first inner step after a rebuild the solver has converged.

    ``cost_trace`` holds the linearized cost per inner step;
    ``exact_cost_trace`` holds the exact cost at each rebuild.

    ``inner="explicit"`` runs the inner steps on full-length vectors;
    ``"projected"`` (default) runs the identical algebra on the 6x6 Gram
    matrix of the base atoms and partials.
    """
    engines = {"explicit": _ExplicitInner, "projected": _ProjectedInner}
    if inner not in engines:
        raise ValueError(f"unknown inner mode {inner!r}")
    y = _as_vector(y)
    p = np.asarray(coarse.initial_position if p_init is None else p_init, dtype=float).copy()
    mu = cfg.damping_mu
    res = RefinementResult(position=Position2D(*p), gains=coarse.initial_gains)
    prev_cost = None

    for k in range(cfg.k_outer):
        pack = build_atom_pack(p, scenario, probing)
        engine = engines[inner](pack, y, scenario)
        res.rebuild_count += 1
        res.outer_count += 1
        stop = False
        for i in range(cfg.k_inner):
            gains, cost = engine.gains_and_cost(p)
            res.cost_trace.append(cost)
            res.gain_trace.append(gains)
            res.position_trace.append(Position2D(*p))
            res.trace_index.append((k, i))
            if i == 0:
                exact = nls_cost(y, pack.phi_d, pack.phi_r, gains)
                if res.exact_cost_trace and cfg.cost_tolerance > 0:
                    last = res.exact_cost_trace[-1]
                    if abs(last - exact) <= cfg.cost_tolerance * max(last, np.finfo(float).tiny):
                        res.exact_cost_trace.append(exact)
                        res.converged = True
                        stop = True
                        break
                res.exact_cost_trace.append(exact)
            if cfg.damping_adaptation == "multiplicative" and prev_cost is not None:
                mu = float(np.clip(mu * (0.5 if cost < prev_cost else 4.0), MU_MIN, MU_MAX))
            prev_cost = cost

            step = engine.step(p, gains, mu)
            _check_finite(p, step, "refine_proposed")
            p = p + step
            res.inner_count += 1
            norm = float(np.hypot(*step))
            res.step_norms.append(norm)
            if norm < cfg.step_tolerance:
                if i == 0:
                    res.converged = True
                    stop = True
                break
        if stop:
            break

    phi_d, phi_r = sensing_atoms(p, scenario, probing)
    res.gains = solve_gains(y, phi_d, phi_r)
    res.final_cost = nls_cost(y, phi_d, phi_r, res.gains)
    res.position = Position2D(float(p[0]), float(p[1]))
    return res


def cd_sweep(y, phi_d, phi_r, gains) -> tuple[complex, complex]:
    """One coordinate-descent pass: scalar LS for g_d, then for g_r."""
    y = _as_vector(y)
    g_d = np.vdot(phi_d, y - phi_r * gains[1]) / np.vdot(phi_d, phi_d).real
    g_r = np.vdot(phi_r, y - phi_d * g_d) / np.vdot(phi_r, phi_r).real
    return complex(g_d), complex(g_r)


def _exact_cost(y, p, gains, scenario, probing) -> float:
    try:
        phi_d, phi_r = sensing_atoms(p, scenario, probing)
    except DegenerateGeometryError:
        return np.inf
    return nls_cost(y, phi_d, phi_r, gains)


def refine_baseline_cdgd(y, coarse: CoarseEstimate, scenario: Scenario, probing: ProbingSet,
                         cfg: SolverConfig = SolverConfig(), p_init=None) -> RefinementResult:
    """Coordinate descent on gains plus gradient descent on position.

    Every iteration rebuilds the exact atoms and partials, runs one CD
    sweep over (g_d, g_r), and moves along ``b = Re{J^H e}``. The step
    length starts at the exact line minimiser of the linearized model,
    ``|b|^2 / |J b|^2``, and is halved until the Armijo condition holds on
    the exact cost (gains fixed).
    """
    y = _as_vector(y)
    p = np.asarray(coarse.initial_position if p_init is None else p_init, dtype=float).copy()
    gains = coarse.initial_gains
    n_iter = cfg.baseline_iterations or cfg.total_inner_steps
    res = RefinementResult(position=Position2D(*p), gains=gains)

    for k in range(n_iter):
        pack = build_atom_pack(p, scenario, probing)
        res.rebuild_count += 1
        res.outer_count += 1
        gains = cd_sweep(y, pack.phi_d, pack.phi_r, gains)
        e = y - pack.phi_d * gains[0] - pack.phi_r * gains[1]
        cost = float(np.vdot(e, e).real)
        res.cost_trace.append(cost)
        res.exact_cost_trace.append(cost)
        res.gain_trace.append(gains)
        res.position_trace.append(Position2D(*p))
        res.trace_index.append((k, 0))

        j_x, j_y = _jacobian_at(pack, gains, p, scenario)
        b = np.array([np.vdot(j_x, e).real, np.vdot(j_y, e).real])
        bb = float(b @ b)
        jb = j_x * b[0] + j_y * b[1]
        jbn = float(np.vdot(jb, jb).real)
        step = np.zeros(2)
        if bb > 0 and jbn > 0:
            alpha = bb / jbn
            for _ in range(MAX_BACKTRACKS + 1):
                trial = p + alpha * b
                res.cost_evaluations += 1
                if _exact_cost(y, trial, gains, scenario, probing) <= cost - 2.0 * ARMIJO_C * alpha * bb:
                    step = alpha * b
                    break
                alpha *= 0.5
        _check_finite(p, step, "refine_baseline_cdgd")
        p = p + step
        res.inner_count += 1
        norm = float(np.hypot(*step))
        res.step_norms.append(norm)
        if 0 < norm < cfg.step_tolerance:
            res.converged = True
            break

    res.gains = gains
    res.final_cost = _exact_cost(y, p, gains, scenario, probing)
    res.position = Position2D(float(p[0]), float(p[1]))
    return res
