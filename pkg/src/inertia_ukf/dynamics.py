"""Truth and filter process model.

Chaser two-body orbit, nonlinear relative translation in the chaser LVLH
frame, MRP attitude kinematics and the torque-free Euler equation with an
inertia tensor built from six free parameters.  State arrays broadcast
over leading axes so the filter can push all sigma points through at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attitude import mrp_kinematics, mrp_shadow

MU_EARTH = 3.986004418e14  # m^3/s^2

# Augmented state layout: [r(3), v(3), p(3), w(3), theta_J(6), b(1)].
POS = slice(0, 3)
VEL = slice(3, 6)
MRP = slice(6, 9)
RATE = slice(9, 12)
INERTIA = slice(12, 18)
BIAS = 18
STATE_DIM = 19

STATE_NAMES = (
    "x", "y", "z", "vx", "vy", "vz",
    "p1", "p2", "p3", "wx", "wy", "wz",
    "Jxx", "Jyy", "Jzz", "Jxy", "Jxz", "Jyz",
    "b",
)
INERTIA_NAMES = STATE_NAMES[12:18]

# Nominal trace-normalized principal moments of an ENVISAT-like target.
NOMINAL_NORMALIZED_INERTIA = np.array([0.063, 0.459, 0.478, 0.0, 0.0, 0.0])

# Above this condition number a sigma point's inertia is re-regularized.
MAX_INERTIA_CONDITION = 1e10


class DynamicsError(ValueError):
    """Raised for states outside the model's domain (non-positive radius etc.)."""


@dataclass(frozen=True)
class ChaserOrbitState:
    radius: float  # m
    radius_rate: float  # m/s
    anomaly: float  # rad
    anomaly_rate: float  # rad/s

    def as_array(self) -> np.ndarray:
        return np.array([self.radius, self.radius_rate, self.anomaly, self.anomaly_rate])

    @classmethod
    def circular(cls, radius: float, mu: float = MU_EARTH, anomaly: float = 0.0) -> "ChaserOrbitState":
        return cls(radius, 0.0, anomaly, float(np.sqrt(mu / radius**3)))


def chaser_orbit_deriv(orbit: np.ndarray, mu: float = MU_EARTH) -> tuple[float, float]:
    """Return ``(r_ddot, theta_ddot)`` of the planar two-body chaser orbit.

    ``orbit`` is ``[r, r_dot, theta, theta_dot]`` (array or
    :class:`ChaserOrbitState`).
    """
    if isinstance(orbit, ChaserOrbitState):
        orbit = orbit.as_array()
    orbit = np.asarray(orbit, dtype=float)
    r, rdot, thdot = orbit[..., 0], orbit[..., 1], orbit[..., 3]
    if np.any(r <= 0.0):
        raise DynamicsError("chaser orbital radius must be positive")
    rddot = r * thdot**2 - mu / r**2
    thddot = -2.0 * rdot * thdot / r
    return rddot, thddot


def orbit_state_deriv(orbit: np.ndarray, mu: float = MU_EARTH) -> np.ndarray:
    rddot, thddot = chaser_orbit_deriv(orbit, mu)
    return np.stack([orbit[..., 1], rddot, orbit[..., 3], thddot], axis=-1)


def relative_translation_accel(
    pos: np.ndarray, vel: np.ndarray, orbit: np.ndarray, mu: float = MU_EARTH
) -> np.ndarray:
    """Nonlinear LVLH relative acceleration of the target about the chaser.

    ``pos``/``vel`` are ``(..., 3)`` LVLH position (m) and velocity (m/s);
    ``orbit`` is the chaser ``[r, r_dot, theta, theta_dot]``.
    """
    if isinstance(orbit, ChaserOrbitState):
        orbit = orbit.as_array()
    orbit = np.asarray(orbit, dtype=float)
    pos = np.asarray(pos, dtype=float)
    vel = np.asarray(vel, dtype=float)
    r = orbit[..., 0]
    thdot = orbit[..., 3]
    _, thddot = chaser_orbit_deriv(orbit, mu)
    x, y, z = pos[..., 0], pos[..., 1], pos[..., 2]
    xd, yd = vel[..., 0], vel[..., 1]
    rho2 = (r + x) ** 2 + y**2 + z**2
    if np.any(rho2 <= 0.0):
        raise DynamicsError("target coincides with the Earth's centre")
    k = mu / rho2**1.5
    ax = 2.0 * thdot * yd + thddot * y + thdot**2 * x - k * (r + x) + mu / r**2
    ay = -2.0 * thdot * xd - thddot * x + thdot**2 * y - k * y
    az = -k * z
    return np.stack([ax, ay, az], axis=-1)


def inertia_from_params(theta: np.ndarray) -> np.ndarray:
    """Symmetric inertia matrix from ``(Jxx, Jyy, Jzz, Jxy, Jxz, Jyz)``.

    Off-diagonal parameters are the literal matrix elements, not negated
    products of inertia.
    """
    theta = np.asarray(theta, dtype=float)
    jxx, jyy, jzz, jxy, jxz, jyz = (theta[..., i] for i in range(6))
    return np.stack(
        [
            np.stack([jxx, jxy, jxz], axis=-1),
            np.stack([jxy, jyy, jyz], axis=-1),
            np.stack([jxz, jyz, jzz], axis=-1),
        ],
        axis=-2,
    )


def params_from_inertia(J: np.ndarray) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    return np.stack(
        [J[..., 0, 0], J[..., 1, 1], J[..., 2, 2], J[..., 0, 1], J[..., 0, 2], J[..., 1, 2]], axis=-1
    )


def normalize_inertia(theta: np.ndarray) -> np.ndarray:
    """Divide all six inertia parameters by ``Jxx + Jyy + Jzz``."""
    theta = np.asarray(theta, dtype=float)
    tr = theta[..., 0] + theta[..., 1] + theta[..., 2]
    if np.any(tr <= 0.0):
        raise DynamicsError("inertia trace must be positive to normalize")
    return theta / tr[..., None]


def _regularized_inverse(J: np.ndarray) -> np.ndarray:
    # Closed-form 3x3 inverse via the adjugate; batched.
    a, b, c = J[..., 0, 0], J[..., 0, 1], J[..., 0, 2]
    d, e, f = J[..., 1, 0], J[..., 1, 1], J[..., 1, 2]
    g, h, i = J[..., 2, 0], J[..., 2, 1], J[..., 2, 2]
    adj = np.stack(
        [
            np.stack([e * i - f * h, c * h - b * i, b * f - c * e], axis=-1),
            np.stack([f * g - d * i, a * i - c * g, c * d - a * f], axis=-1),
            np.stack([d * h - e * g, b * g - a * h, a * e - b * d], axis=-1),
        ],
        axis=-2,
    )
    det = a * adj[..., 0, 0] + b * adj[..., 1, 0] + c * adj[..., 2, 0]
    scale = np.sqrt(np.sum(J * J, axis=(-2, -1)))
    # |det| / ||J||_F^3 is a cheap, scale-free proxy for 1 / condition number.
    ill = np.abs(det) <= scale**3 / MAX_INERTIA_CONDITION
    if np.any(ill):
        tr = np.abs(np.trace(J, axis1=-2, axis2=-1))
        eps = 1e-9 * np.where(tr > 0.0, tr, np.where(scale > 0.0, scale, 1.0))
        Jr = J + np.where(ill, eps, 0.0)[..., None, None] * np.eye(3)
        return np.linalg.inv(Jr)
    return adj / det[..., None, None]


def floor_inertia(J: np.ndarray, floor: float) -> np.ndarray:
    """Lift eigenvalues of ``J`` that sit below ``floor * ||J||_F``.

    An eigenvalue ``lam < m`` becomes ``m^2 / (2m - lam)``: positive,
    increasing in ``lam`` and tangent to the identity at ``m``, so the
    ordering between nearby matrices (and the filter's sensitivities) is
    kept while the inverse stays bounded.  Safe matrices pass unchanged.
    """
    J = np.array(J, dtype=float)
    m = floor * np.sqrt(np.sum(J * J, axis=(-2, -1)))
    if floor <= 0.0:
        return J
    flat = J.reshape(-1, 3, 3)
    mm = np.broadcast_to(m, J.shape[:-2]).reshape(-1)
    for k in range(len(flat)):
        if mm[k] <= 0.0:
            continue
        lam, V = np.linalg.eigh(flat[k])
        if lam[0] - mm[k] > 0.0:
            continue
        lam = np.where(lam < mm[k], mm[k] ** 2 / (2.0 * mm[k] - lam), lam)
        flat[k] = (V * lam) @ V.T
    return flat.reshape(J.shape)


def rotational_deriv(
    omega: np.ndarray, theta: np.ndarray, torque: np.ndarray | None = None, inertia_floor: float = 0.0
) -> np.ndarray:
    """Angular acceleration ``J^-1 (tau - w x (J w))`` of the target body.

    ``omega`` in rad/s; ``torque`` defaults to zero.  The gyroscopic term
    always uses ``J`` as given.  For the inverse, ``inertia_floor > 0``
    applies :func:`floor_inertia`; otherwise near-singular matrices get
    ``1e-9 * trace`` added on the diagonal.
    """
    omega = np.asarray(omega, dtype=float)
    J = inertia_from_params(theta)
    h = np.einsum("...ij,...j->...i", J, omega)
    rhs = -np.cross(omega, h)
    if torque is not None:
        rhs = rhs + torque
    Jinv = _regularized_inverse(floor_inertia(J, inertia_floor) if inertia_floor > 0.0 else J)
    return np.einsum("...ij,...j->...i", Jinv, rhs)


def state_derivative(
    x: np.ndarray,
    orbit: np.ndarray,
    mu: float = MU_EARTH,
    torque: np.ndarray | None = None,
    inertia_floor: float = 0.0,
) -> np.ndarray:
    """Time derivative of the 19-element augmented state (inertia and bias are constant)."""
    x = np.asarray(x, dtype=float)
    dx = np.zeros_like(x)
    dx[..., POS] = x[..., VEL]
    dx[..., VEL] = relative_translation_accel(x[..., POS], x[..., VEL], orbit, mu)
    dx[..., MRP] = mrp_kinematics(x[..., MRP], x[..., RATE])
    dx[..., RATE] = rotational_deriv(x[..., RATE], x[..., INERTIA], torque, inertia_floor)
    return dx


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], x: np.ndarray, t: float, dt: float) -> np.ndarray:
    """One classical fixed-step fourth-order Runge-Kutta step."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite state in RK4 step")
    return out


def propagate(
    x: np.ndarray,
    orbit: np.ndarray,
    dt: float,
    substeps: int = 10,
    mu: float = MU_EARTH,
    torque: np.ndarray | None = None,
    shadow: bool = True,
    compiled: bool = True,
    inertia_floor: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance relative state(s) and the chaser orbit together by ``dt`` seconds.

    The orbit rides along as four extra columns so each RK4 stage sees the
    matching chaser state.  With ``shadow=True`` the MRP block is switched
    to the short set after every substep (truth propagation); the filter
    passes ``shadow=False`` and handles the switch on its mean instead.
    ``compiled=False`` runs the plain numpy path built on
    :func:`state_derivative` and :func:`rk4_step`.  ``inertia_floor`` is
    passed to :func:`rotational_deriv`.

    Returns the propagated state(s) and the propagated orbit array.
    """
    x = np.asarray(x, dtype=float)
    orbit = np.asarray(orbit.as_array() if isinstance(orbit, ChaserOrbitState) else orbit, dtype=float)
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if np.any(orbit[0] <= 0.0):
        raise DynamicsError("chaser orbital radius must be positive")
    if compiled:
        from ._kernels import propagate_rows

        tq = np.zeros(3) if torque is None else np.asarray(torque, dtype=float)
        rows = np.ascontiguousarray(x.reshape(-1, STATE_DIM))
        out, new_orbit, ok = propagate_rows(rows, orbit, float(dt), int(substeps), float(mu), tq, shadow, MAX_INERTIA_CONDITION, float(inertia_floor))
        if not ok:
            raise FloatingPointError("non-finite state in RK4 step")
        return out.reshape(x.shape), new_orbit

    batch = x.shape[:-1]
    y = np.concatenate([x, np.broadcast_to(orbit, batch + (4,))], axis=-1)

    def f(_t: float, yy: np.ndarray) -> np.ndarray:
        ob = yy[..., STATE_DIM:]
        return np.concatenate(
            [state_derivative(yy[..., :STATE_DIM], ob, mu, torque, inertia_floor), orbit_state_deriv(ob, mu)], axis=-1
        )

    h = dt / substeps
    for k in range(substeps):
        y = rk4_step(f, y, k * h, h)
        if shadow:
            y[..., MRP] = mrp_shadow(y[..., MRP])
    new_orbit = y[(0,) * len(batch) + (slice(STATE_DIM, None),)] if batch else y[STATE_DIM:]
    return y[..., :STATE_DIM], np.array(new_orbit)


def rotational_energy(omega: np.ndarray, theta: np.ndarray) -> np.ndarray:
    J = inertia_from_params(theta)
    return 0.5 * np.einsum("...i,...ij,...j->...", omega, J, omega)


def angular_momentum_norm(omega: np.ndarray, theta: np.ndarray) -> np.ndarray:
    J = inertia_from_params(theta)
    return np.linalg.norm(np.einsum("...ij,...j->...i", J, omega), axis=-1)
