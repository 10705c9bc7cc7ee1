"""2D geometry between the base station, the RIS and the target.

Angles are measured counterclockwise from the global +x axis at the
observing node. Distances are in meters, delays in microseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class DegenerateGeometryError(ValueError):
    """Raised when the target coincides with the BS or the RIS."""


class Position2D(NamedTuple):
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class GeometricParams:
    theta_bt: float
    theta_rt: float
    tau_d: float
    tau_r: float
    d_bt: float
    d_rt: float
    d_br: float

    @property
    def theta_tb(self) -> float:
        # monostatic direct echo returns along the reversed ray
        return self.theta_bt + np.pi


@dataclass(frozen=True)
class GeometryJacobian:
    dtheta_bt_dx: float
    dtheta_bt_dy: float
    dtheta_rt_dx: float
    dtheta_rt_dy: float
    dtau_d_dx: float
    dtau_d_dy: float
    dtau_r_dx: float
    dtau_r_dy: float

    def as_matrix(self) -> np.ndarray:
        """Rows (theta_bt, tau_d, theta_rt, tau_r), columns (x, y)."""
        return np.array([
            [self.dtheta_bt_dx, self.dtheta_bt_dy],
            [self.dtau_d_dx, self.dtau_d_dy],
            [self.dtheta_rt_dx, self.dtheta_rt_dy],
            [self.dtau_r_dx, self.dtau_r_dy],
        ])


def _offset(p_t, q, name: str) -> tuple[float, float]:
    rx, ry = float(p_t[0]) - float(q[0]), float(p_t[1]) - float(q[1])
    if rx == 0.0 and ry == 0.0:
        raise DegenerateGeometryError(f"target coincides with the {name}")
    return rx, ry


def angle_from(q, p) -> float:
    """Angle of point ``p`` seen from node ``q``."""
    return math.atan2(float(p[1]) - float(q[1]), float(p[0]) - float(q[0]))


def geometric_params(p_t, p_b, p_r, c: float) -> GeometricParams:
    """Angles, one-way distances and two-way delays for a target at ``p_t``.

    Parameters
    ----------
    p_t, p_b, p_r : array_like, shape (2,)
        Target, BS and RIS positions in meters.
    c : float
        Propagation speed in m/us.

    Returns
    -------
    GeometricParams
    """
    bx, by = _offset(p_t, p_b, "BS")
    rx, ry = _offset(p_t, p_r, "RIS")
    d_bt = math.hypot(bx, by)
    d_rt = math.hypot(rx, ry)
    d_br = math.hypot(float(p_r[0]) - float(p_b[0]), float(p_r[1]) - float(p_b[1]))
    return GeometricParams(
        theta_bt=math.atan2(by, bx),
        theta_rt=math.atan2(ry, rx),
        tau_d=2.0 * d_bt / c,
        tau_r=2.0 * (d_br + d_rt) / c,
        d_bt=d_bt,
        d_rt=d_rt,
        d_br=d_br,
    )


def geometry_jacobian(p_t, p_b, p_r, c: float) -> GeometryJacobian:
    """Closed-form partials of (theta_bt, theta_rt, tau_d, tau_r) w.r.t. (x, y).

    For a node q and r = p_t - q: d theta/dx = -r_y/|r|^2,
    d theta/dy = r_x/|r|^2, and the delay gradient is (2/c) r/|r|.
    """
    bx, by = _offset(p_t, p_b, "BS")
    rx, ry = _offset(p_t, p_r, "RIS")
    nb2, nr2 = bx * bx + by * by, rx * rx + ry * ry
    nb, nr = math.sqrt(nb2), math.sqrt(nr2)
    return GeometryJacobian(
        dtheta_bt_dx=-by / nb2,
        dtheta_bt_dy=bx / nb2,
        dtheta_rt_dx=-ry / nr2,
        dtheta_rt_dy=rx / nr2,
        dtau_d_dx=2.0 * bx / (nb * c),
        dtau_d_dy=2.0 * by / (nb * c),
        dtau_r_dx=2.0 * rx / (nr * c),
        dtau_r_dy=2.0 * ry / (nr * c),
    )
