"""Compiled RK4 propagation of a stack of augmented states.

Mirrors :func:`dynamics.state_derivative` / :func:`dynamics.propagate`
term for term; the numpy versions stay the reference and the tests hold
the two together.  Each row carries its own copy of the chaser orbit so
the arithmetic matches the numpy joint-state integration exactly.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_N = 23  # 19 relative states + 4 orbit states


@njit(cache=True)
def _floor_inertia(a, e, i, b, c, f, floor):
    # Eigenvalues below floor * ||J||_F are lifted smoothly: lam -> m^2 / (2 m - lam).
    scale = np.sqrt(a * a + e * e + i * i + 2.0 * (b * b + c * c + f * f))
    m = floor * scale
    if m <= 0.0:
        return a, e, i, b, c, f
    # Sylvester test on J - m I: skip the eigendecomposition when safe.
    a1 = a - m
    e1 = e - m
    i1 = i - m
    if a1 > 0.0 and a1 * e1 - b * b > 0.0 and a1 * (e1 * i1 - f * f) - b * (b * i1 - f * c) + c * (b * f - e1 * c) > 0.0:
        return a, e, i, b, c, f
    J = np.empty((3, 3))
    J[0, 0] = a
    J[1, 1] = e
    J[2, 2] = i
    J[0, 1] = J[1, 0] = b
    J[0, 2] = J[2, 0] = c
    J[1, 2] = J[2, 1] = f
    lam, V = np.linalg.eigh(J)
    for k in range(3):
        if lam[k] < m:
            lam[k] = m * m / (2.0 * m - lam[k])
    Jr = (V * lam) @ V.T
    return Jr[0, 0], Jr[1, 1], Jr[2, 2], Jr[0, 1], Jr[0, 2], Jr[1, 2]


@njit(cache=True)
def _deriv(y, out, mu, tq, max_cond, floor):
    r = y[19]
    rd = y[20]
    thd = y[22]
    rdd = r * thd * thd - mu / (r * r)
    thdd = -2.0 * rd * thd / r
    x, yy, z = y[0], y[1], y[2]
    xd, yd = y[3], y[4]
    rho2 = (r + x) ** 2 + yy * yy + z * z
    k = mu / rho2**1.5
    out[0] = y[3]
    out[1] = y[4]
    out[2] = y[5]
    out[3] = 2.0 * thd * yd + thdd * yy + thd * thd * x - k * (r + x) + mu / (r * r)
    out[4] = -2.0 * thd * xd - thdd * x + thd * thd * yy - k * yy
    out[5] = -k * z

    p1, p2, p3 = y[6], y[7], y[8]
    w1, w2, w3 = y[9], y[10], y[11]
    s = p1 * p1 + p2 * p2 + p3 * p3
    pw = p1 * w1 + p2 * w2 + p3 * w3
    out[6] = 0.25 * ((1.0 - s) * w1 + 2.0 * pw * p1 + 2.0 * (p2 * w3 - p3 * w2))
    out[7] = 0.25 * ((1.0 - s) * w2 + 2.0 * pw * p2 + 2.0 * (p3 * w1 - p1 * w3))
    out[8] = 0.25 * ((1.0 - s) * w3 + 2.0 * pw * p3 + 2.0 * (p1 * w2 - p2 * w1))

    a, e, i = y[12], y[13], y[14]
    b, c, f = y[15], y[16], y[17]
    h1 = a * w1 + b * w2 + c * w3
    h2 = b * w1 + e * w2 + f * w3
    h3 = c * w1 + f * w2 + i * w3
    m1 = -(w2 * h3 - w3 * h2) + tq[0]
    m2 = -(w3 * h1 - w1 * h3) + tq[1]
    m3 = -(w1 * h2 - w2 * h1) + tq[2]
    if floor > 0.0:
        a, e, i, b, c, f = _floor_inertia(a, e, i, b, c, f, floor)
        det = a * (e * i - f * f) - b * (b * i - f * c) + c * (b * f - e * c)
    else:
        scale = np.sqrt(a * a + e * e + i * i + 2.0 * (b * b + c * c + f * f))
        det = a * (e * i - f * f) - b * (b * i - f * c) + c * (b * f - e * c)
        if abs(det) <= scale**3 / max_cond:
            tr = abs(a + e + i)
            eps = 1e-9 * (tr if tr > 0.0 else (scale if scale > 0.0 else 1.0))
            a += eps
            e += eps
            i += eps
            det = a * (e * i - f * f) - b * (b * i - f * c) + c * (b * f - e * c)
    i11 = e * i - f * f
    i12 = c * f - b * i
    i13 = b * f - c * e
    i22 = a * i - c * c
    i23 = c * b - a * f
    i33 = a * e - b * b
    out[9] = (i11 * m1 + i12 * m2 + i13 * m3) / det
    out[10] = (i12 * m1 + i22 * m2 + i23 * m3) / det
    out[11] = (i13 * m1 + i23 * m2 + i33 * m3) / det
    for j in range(12, 19):
        out[j] = 0.0
    out[19] = rd
    out[20] = rdd
    out[21] = thd
    out[22] = thdd


@njit(cache=True)
def propagate_rows(X, orbit, dt, substeps, mu, tq, shadow, max_cond, floor):
    """RK4-propagate each row of ``X`` (n, 19) with the orbit riding along.

    Returns ``(X_out, orbit_out, ok)``; ``ok`` is False if any value went
    non-finite.
    """
    n = X.shape[0]
    out = np.empty((n, 19))
    orbit_out = orbit.copy()
    h = dt / substeps
    y = np.empty(_N)
    tmp = np.empty(_N)
    k1 = np.empty(_N)
    k2 = np.empty(_N)
    k3 = np.empty(_N)
    k4 = np.empty(_N)
    ok = True
    for row in range(n):
        for j in range(19):
            y[j] = X[row, j]
        for j in range(4):
            y[19 + j] = orbit[j]
        for _ in range(substeps):
            _deriv(y, k1, mu, tq, max_cond, floor)
            for j in range(_N):
                tmp[j] = y[j] + 0.5 * h * k1[j]
            _deriv(tmp, k2, mu, tq, max_cond, floor)
            for j in range(_N):
                tmp[j] = y[j] + 0.5 * h * k2[j]
            _deriv(tmp, k3, mu, tq, max_cond, floor)
            for j in range(_N):
                tmp[j] = y[j] + h * k3[j]
            _deriv(tmp, k4, mu, tq, max_cond, floor)
            for j in range(_N):
                y[j] = y[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            if shadow:
                s = y[6] * y[6] + y[7] * y[7] + y[8] * y[8]
                if s > 1.0:
                    y[6] = -y[6] / s
                    y[7] = -y[7] / s
                    y[8] = -y[8] / s
        for j in range(19):
            out[row, j] = y[j]
            if not np.isfinite(y[j]):
                ok = False
        if row == 0:
            for j in range(4):
                orbit_out[j] = y[19 + j]
    return out, orbit_out, ok
