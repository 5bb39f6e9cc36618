"""Augmented unscented Kalman filter with two online noise-adaptation laws.

The generic pieces (:func:`ut_weights`, :func:`sigma_points`,
:func:`unscented_predict`, :func:`unscented_update`) work on any
state/measurement callables.  :func:`predict`, :func:`update` and
:func:`dropout_inflate` specialise them to the 19-element pose, inertia
and depth-bias state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .attitude import mrp_shadow_jacobian
from .dynamics import MRP, MU_EARTH, STATE_DIM, propagate
from .measurement import CameraModel, MarkerSet, MeasurementFrame, measurement_noise, predict_measurements


class FilterDivergence(RuntimeError):
    """Non-finite propagation or an unrecoverable covariance factorization."""


@dataclass(frozen=True)
class UtConfig:
    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0


@dataclass(frozen=True)
class UtWeights:
    mean: np.ndarray
    cov: np.ndarray
    lam: float

    @property
    def n(self) -> int:
        return (len(self.mean) - 1) // 2


def ut_weights(L: int, cfg: UtConfig = UtConfig()) -> UtWeights:
    """Scaled unscented-transform weights for an ``L``-dimensional state."""
    if L < 1:
        raise ValueError("state dimension must be at least 1")
    if cfg.alpha == 0.0:
        raise ValueError("alpha must be non-zero")
    lam = cfg.alpha**2 * (L + cfg.kappa) - L
    if L + lam <= 0.0:
        raise ValueError(f"L + lambda must be positive (got {L + lam})")
    wm = np.full(2 * L + 1, 1.0 / (2.0 * (L + lam)))
    wc = wm.copy()
    wm[0] = lam / (L + lam)
    wc[0] = wm[0] + (1.0 - cfg.alpha**2 + cfg.beta)
    return UtWeights(wm, wc, lam)


def sigma_points(x: np.ndarray, P: np.ndarray, w: UtWeights) -> np.ndarray:
    """``2L + 1`` sigma points as rows: ``x``, then ``x + S[:, i]``, then ``x - S[:, i]``.

    ``S`` is the lower Cholesky factor of ``(L + lambda) P``.  A failed
    factorization is retried with diagonal jitter before giving up.
    """
    x = np.asarray(x, dtype=float)
    L = x.size
    A = (L + w.lam) * 0.5 * (P + P.T)
    eps = max(1e-12 * np.trace(A) / L, 1e-30)
    for attempt in range(4):
        try:
            S = np.linalg.cholesky(A if attempt == 0 else A + eps * np.eye(L))
            break
        except np.linalg.LinAlgError:
            if attempt:
                eps *= 100.0
    else:
        raise FilterDivergence("covariance is not positive definite, even after jitter")
    return np.vstack([x, x + S.T, x - S.T])


def weighted_mean(points: np.ndarray, w: UtWeights) -> np.ndarray:
    return w.mean @ points


def weighted_cov(a: np.ndarray, a_mean: np.ndarray, b: np.ndarray, b_mean: np.ndarray, w: UtWeights) -> np.ndarray:
    return ((a - a_mean) * w.cov[:, None]).T @ (b - b_mean)


def unscented_predict(
    x: np.ndarray,
    P: np.ndarray,
    fx: Callable[[np.ndarray], np.ndarray],
    Q: np.ndarray,
    w: UtWeights,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Time update.  ``fx`` maps a ``(2L+1, L)`` stack of points to their successors.

    Returns ``(x_prior, P_prior, chi_prev, chi_prop)``.
    """
    chi = sigma_points(x, P, w)
    chi_f = fx(chi)
    if not np.all(np.isfinite(chi_f)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(chi_f), axis=1))[0])
        raise FilterDivergence(f"sigma point {bad} propagated to a non-finite state")
    xp = weighted_mean(chi_f, w)
    Pp = weighted_cov(chi_f, xp, chi_f, xp, w) + Q
    return xp, 0.5 * (Pp + Pp.T), chi, chi_f


def adaptive_R(e: np.ndarray, S: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Innovation-driven measurement noise: ``R + max(0, diag(e e^T - S - R))``."""
    e = np.asarray(e, dtype=float)
    inflation = np.maximum(0.0, e * e - np.diag(S) - np.diag(R))
    return R + np.diag(inflation)


def _solve_spd(S: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Return ``B @ inv(S)`` for symmetric positive definite ``S``."""
    try:
        c = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        floor = 1e-12 * max(float(np.max(np.abs(np.diag(S)))), 1.0)
        try:
            c = np.linalg.cholesky(S + floor * np.eye(len(S)))
        except np.linalg.LinAlgError as exc:
            raise FilterDivergence("innovation covariance is singular") from exc
    y = np.linalg.solve(c, B.T)
    return np.linalg.solve(c.T, y).T


@dataclass
class UpdateInfo:
    innovation: np.ndarray
    S: np.ndarray
    R_eff: np.ndarray
    r_inflation: float


def unscented_update(
    x: np.ndarray,
    P: np.ndarray,
    hx: Callable[[np.ndarray], np.ndarray],
    z: np.ndarray,
    R: np.ndarray,
    w: UtWeights,
    adaptive: bool = True,
) -> tuple[np.ndarray, np.ndarray, UpdateInfo]:
    """Measurement update with sigma points redrawn from the prior ``(x, P)``."""
    chi = sigma_points(x, P, w)
    gam = hx(chi)
    zhat = weighted_mean(gam, w)
    Pzz = weighted_cov(gam, zhat, gam, zhat, w)
    T = weighted_cov(chi, x, gam, zhat, w)
    e = np.asarray(z, dtype=float) - zhat
    R_eff = adaptive_R(e, Pzz + R, R) if adaptive else R
    S = Pzz + R_eff
    S = 0.5 * (S + S.T)
    K = _solve_spd(S, T)
    x_post = x + K @ e
    P_post = P - K @ S @ K.T
    P_post = 0.5 * (P_post + P_post.T)
    info = UpdateInfo(e, S, R_eff, float(np.trace(R_eff) - np.trace(R)))
    return x_post, P_post, info


def cross_cov_D(
    chi_prev: np.ndarray, chi_prop: np.ndarray, x_prev: np.ndarray, x_prior: np.ndarray, Wc: np.ndarray
) -> np.ndarray:
    """Forward cross-covariance between pre- and post-propagation sigma deviations."""
    chi_prev = np.asarray(chi_prev, dtype=float)
    chi_prop = np.asarray(chi_prop, dtype=float)
    if chi_prev.shape != chi_prop.shape or len(Wc) != len(chi_prev):
        raise ValueError("sigma sets and weights must come from the same prediction")
    return ((chi_prev - x_prev) * np.asarray(Wc)[:, None]).T @ (chi_prop - x_prior)


def dropout_covariance(P_prior: np.ndarray, P_prev: np.ndarray, D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Covariance injection ``D (P_prior - P_prev) D^T`` used when no update happens.

    Returns the inflated, symmetrized covariance and the injection itself.
    """
    Qa = D @ (P_prior - P_prev) @ D.T
    Qa = 0.5 * (Qa + Qa.T)
    P = P_prior + Qa
    return 0.5 * (P + P.T), Qa


# --- augmented pose/inertia/bias filter -----------------------------------


@dataclass(frozen=True)
class FilterConfig:
    ut: UtConfig = field(default_factory=UtConfig)
    substeps: int = 10
    pixel_sigma: float = 1.0
    depth_sigma: float = 0.05
    adaptive_r: bool = True
    adaptive_q: bool = True
    min_visible: int = 3
    mu: float = MU_EARTH
    inertia_floor: float = 0.02


def default_process_noise() -> np.ndarray:
    q = np.concatenate([
        np.full(3, 1e-6),  # position, m^2
        np.full(3, 1e-8),  # velocity, m^2/s^2
        np.full(3, 1e-7),  # MRP
        np.full(3, 1e-8),  # rate, rad^2/s^2
        np.full(6, 1e-10),  # inertia parameters
        [1e-8],  # depth bias, m^2
    ])
    return np.diag(q)


@dataclass(frozen=True)
class FilterState:
    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    # Retained by predict() for the dropout law.
    x_prev: np.ndarray | None = None
    P_prev: np.ndarray | None = None
    chi_prev: np.ndarray | None = None
    chi_prop: np.ndarray | None = None
    D: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.x.shape != (STATE_DIM,) or self.P.shape != (STATE_DIM, STATE_DIM):
            raise ValueError("filter state must be 19-dimensional")


def _shadow_switch(x: np.ndarray, P: np.ndarray, D: np.ndarray | None = None):
    """Move the mean MRP to its shadow set when ``|p| > 1``, mapping the covariance.

    Sigma points are never switched one by one: a spread straddling the
    unit sphere would otherwise be averaged across the two sets.
    """
    p = x[MRP]
    if p @ p <= 1.0:
        return x, P, D
    G = np.eye(STATE_DIM)
    G[MRP, MRP] = mrp_shadow_jacobian(p)
    x = x.copy()
    x[MRP] = -p / (p @ p)
    P = G @ P @ G.T
    if D is not None:
        D = D @ G.T
    return x, 0.5 * (P + P.T), D


def predict(fs: FilterState, orbit: np.ndarray, dt: float, cfg: FilterConfig = FilterConfig()) -> FilterState:
    """Propagate every sigma point with RK4 and rebuild the prior; keeps both sigma sets."""
    w = ut_weights(STATE_DIM, cfg.ut)

    def fx(chi: np.ndarray) -> np.ndarray:
        try:
            out, _ = propagate(chi, orbit, dt, cfg.substeps, cfg.mu, shadow=False, inertia_floor=cfg.inertia_floor)
        except FloatingPointError as exc:
            raise FilterDivergence(str(exc)) from exc
        return out

    with np.errstate(over="ignore", invalid="ignore"):
        xp, Pp, chi, chi_f = unscented_predict(fs.x, fs.P, fx, fs.Q, w)
    D = cross_cov_D(chi, chi_f, fs.x, xp, w.cov)
    xp, Pp, D = _shadow_switch(xp, Pp, D)
    return replace(fs, x=xp, P=Pp, x_prev=fs.x, P_prev=fs.P, chi_prev=chi, chi_prop=chi_f, D=D)


@dataclass
class EpochInfo:
    updated: bool
    n_visible: int
    innovation_norm: float = float("nan")
    r_inflation: float = 0.0
    q_injection: float = 0.0


def update(
    fs: FilterState,
    frame: MeasurementFrame,
    cam: CameraModel,
    markers: MarkerSet,
    cfg: FilterConfig = FilterConfig(),
) -> tuple[FilterState, EpochInfo]:
    """RGB-D measurement update over the frame's visible markers.

    Raises :class:`measurement.BehindCameraError` if a sigma point puts a
    marker behind the camera; the caller then treats the epoch as a dropout.
    """
    ids = frame.marker_ids
    if len(ids) < cfg.min_visible:
        raise ValueError(f"{len(ids)} visible markers, need {cfg.min_visible}")
    w = ut_weights(STATE_DIM, cfg.ut)
    R = measurement_noise(len(ids), cfg.pixel_sigma, cfg.depth_sigma)
    x, P, info = unscented_update(
        fs.x, fs.P, lambda chi: predict_measurements(chi, ids, markers, cam), frame.z, R, w, cfg.adaptive_r
    )
    x, P, _ = _shadow_switch(x, P)
    epoch = EpochInfo(True, len(ids), float(np.linalg.norm(info.innovation)), info.r_inflation)
    return replace(fs, x=x, P=P), epoch


def dropout_inflate(fs: FilterState, P_prev: np.ndarray | None = None, cfg: FilterConfig = FilterConfig()) -> tuple[FilterState, EpochInfo]:
    """Dropout path: inflate the prior covariance along the propagation cross-covariance."""
    if fs.D is None:
        raise ValueError("dropout_inflate needs the sigma sets retained by predict()")
    P_prev = fs.P_prev if P_prev is None else P_prev
    if cfg.adaptive_q:
        P, Qa = dropout_covariance(fs.P, P_prev, fs.D)
    else:
        P, Qa = fs.P, np.zeros_like(fs.P)
    return replace(fs, P=P), EpochInfo(False, 0, q_injection=float(np.trace(Qa)))
