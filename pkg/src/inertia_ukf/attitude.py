"""Modified Rodrigues Parameter (MRP) attitude helpers.

Every function broadcasts over leading axes, so a stack of sigma-point
MRPs with shape ``(n, 3)`` is handled in one call.
"""

from __future__ import annotations

import numpy as np


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix ``[v^]`` such that ``skew(v) @ w == cross(v, w)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def mrp_to_rotation(p: np.ndarray) -> np.ndarray:
    """Rotation matrix ``I - e1 [p^] + e2 [p^]^2`` of an MRP.

    With ``s = p.p``, ``e1 = 4 (1 - s) / (1 + s)^2`` and ``e2 = 8 / (1 + s)^2``.
    The matrix maps chaser-frame vectors into the target body frame, the
    frame in which the MRP rate equation takes the body angular velocity;
    its transpose is :func:`body_to_chaser`.
    """
    p = np.asarray(p, dtype=float)
    s = np.sum(p * p, axis=-1)[..., None, None]
    px = skew(p)
    e1 = 4.0 * (1.0 - s) / (1.0 + s) ** 2
    e2 = 8.0 / (1.0 + s) ** 2
    return np.eye(3) - e1 * px + e2 * (px @ px)


def body_to_chaser(p: np.ndarray) -> np.ndarray:
    """Rotation taking target body-frame vectors into the chaser frame."""
    return np.swapaxes(mrp_to_rotation(p), -1, -2)


def mrp_kinematics_matrix(p: np.ndarray) -> np.ndarray:
    """The 3x3 map ``B(p) = (1 - p.p) I + 2 p p^T + 2 [p^]`` (without the 1/4)."""
    p = np.asarray(p, dtype=float)
    s = np.sum(p * p, axis=-1)[..., None, None]
    return (1.0 - s) * np.eye(3) + 2.0 * p[..., :, None] * p[..., None, :] + 2.0 * skew(p)


def mrp_kinematics(p: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """MRP rate ``0.25 * B(p) @ omega`` for body angular velocity ``omega`` (rad/s).

    Written out component-wise so the batched filter propagation avoids
    building 3x3 matrices per sigma point.
    """
    p = np.asarray(p, dtype=float)
    omega = np.asarray(omega, dtype=float)
    s = np.sum(p * p, axis=-1, keepdims=True)
    pw = np.sum(p * omega, axis=-1, keepdims=True)
    return 0.25 * ((1.0 - s) * omega + 2.0 * pw * p + 2.0 * np.cross(p, omega))


def mrp_shadow(p: np.ndarray) -> np.ndarray:
    """Switch to the shadow set ``-p / (p.p)`` wherever ``|p| > 1``.

    Both sets describe the same rotation; the switch keeps the
    representation away from the 360 degree singularity.
    """
    p = np.asarray(p, dtype=float)
    s = np.sum(p * p, axis=-1, keepdims=True)
    return np.where(s > 1.0, -p / np.where(s > 1.0, s, 1.0), p)


def mrp_shadow_jacobian(p: np.ndarray) -> np.ndarray:
    """Jacobian of ``p -> -p / (p.p)``, used to carry a covariance across a switch."""
    p = np.asarray(p, dtype=float)
    s = float(p @ p)
    return -(s * np.eye(3) - 2.0 * np.outer(p, p)) / s**2


def rotation_to_mrp(C: np.ndarray) -> np.ndarray:
    """Inverse of :func:`mrp_to_rotation`, returning the set with ``|p| <= 1``."""
    C = np.asarray(C, dtype=float)
    if C.shape != (3, 3):
        raise ValueError("expected a single 3x3 rotation matrix")
    # Shepperd-style quaternion extraction, then p = q_vec / (1 + q0).
    tr = np.trace(C)
    cands = np.array([tr, C[0, 0], C[1, 1], C[2, 2]])
    k = int(np.argmax(cands))
    if k == 0:
        q0 = 0.5 * np.sqrt(1.0 + tr)
        qv = np.array([C[1, 2] - C[2, 1], C[2, 0] - C[0, 2], C[0, 1] - C[1, 0]]) / (4.0 * q0)
    else:
        i = k - 1
        j, m = (i + 1) % 3, (i + 2) % 3
        qi = 0.5 * np.sqrt(1.0 + 2.0 * C[i, i] - tr)
        q0 = (C[j, m] - C[m, j]) / (4.0 * qi)
        qv = np.empty(3)
        qv[i] = qi
        qv[j] = (C[i, j] + C[j, i]) / (4.0 * qi)
        qv[m] = (C[i, m] + C[m, i]) / (4.0 * qi)
    if q0 < 0.0:
        q0, qv = -q0, -qv
    return qv / (1.0 + q0)
