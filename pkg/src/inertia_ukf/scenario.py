"""Truth simulation, filter orchestration and Monte Carlo statistics.

A run's truth trajectory depends only on the configuration.  The run seed
drives two independent streams: one for the filter's initial estimate and
one for measurement noise.  Monte Carlo run ``i`` uses the seed sequence
``SeedSequence(master_seed).spawn(N)[i]``; spawned children depend only
on ``(master_seed, i)``, so adding runs never changes earlier ones.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attitude import mrp_to_rotation
from .config import ScenarioConfig
from .dynamics import (
    BIAS, INERTIA, MRP, POS, RATE, STATE_DIM, VEL,
    ChaserOrbitState, DynamicsError, normalize_inertia, propagate,
)
from .measurement import BehindCameraError, CameraModel, MarkerSet, MeasurementFrame, simulate_frame
from .ukf import (
    FilterConfig, FilterDivergence, FilterState, UtConfig,
    dropout_inflate, predict, update,
)

log = logging.getLogger(__name__)

ISOTROPIC_PRIOR = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]) / 3.0


def isotropic_prior() -> np.ndarray:
    """Uninformative normalized inertia guess: equal principal moments, no products."""
    return ISOTROPIC_PRIOR.copy()


def sample_informed_prior(
    rng: np.random.Generator,
    truth_normalized: np.ndarray,
    sigma=(0.06, 0.06, 0.06, 0.05, 0.03, 0.03),
    max_tries: int = 100,
    normalize: bool = True,
) -> np.ndarray:
    """Gaussian perturbation of the nominal diagonal, then trace normalization.

    The prior is centred on the truth's diagonal with zero products of
    inertia.  Draws with a non-positive trace are redrawn.  With
    ``normalize=False`` the raw draw is returned.
    """
    truth_normalized = np.asarray(truth_normalized, dtype=float)
    if abs(truth_normalized[:3].sum() - 1.0) > 1e-9:
        raise ValueError("truth inertia must be trace-normalized")
    mean = np.concatenate([truth_normalized[:3], np.zeros(3)])
    for _ in range(max_tries):
        draw = mean + rng.standard_normal(6) * np.asarray(sigma, dtype=float)
        if draw[:3].sum() > 0.0:
            return normalize_inertia(draw) if normalize else draw
    raise RuntimeError("could not draw an informed prior with positive trace")


# --- building blocks from a config -----------------------------------------


def camera_from_config(cfg: ScenarioConfig) -> CameraModel:
    c = cfg.camera
    return CameraModel(
        fx=c.fx, fy=c.fy, cx=c.cx, cy=c.cy, fov_deg=c.fov_deg, width=c.width, height=c.height,
        mount_rotation=mrp_to_rotation(np.array(c.mount_mrp)),
        mount_offset=np.array(c.mount_offset),
    )


def markers_from_config(cfg: ScenarioConfig) -> MarkerSet:
    return MarkerSet.box(cfg.markers.bus_dims)


def orbit_from_config(cfg: ScenarioConfig) -> np.ndarray:
    o = cfg.orbit
    rate = o.anomaly_rate if np.isfinite(o.anomaly_rate) else ChaserOrbitState.circular(o.radius, o.mu).anomaly_rate
    return ChaserOrbitState(o.radius, o.radius_rate, o.anomaly, rate).as_array()


def truth_initial_state(cfg: ScenarioConfig) -> np.ndarray:
    t = cfg.truth
    x = np.zeros(STATE_DIM)
    x[POS] = t.position
    x[VEL] = t.velocity
    x[MRP] = t.mrp
    x[RATE] = np.deg2rad(t.rate_deg)
    x[INERTIA] = np.asarray(t.inertia_normalized) / np.sum(t.inertia_normalized[:3]) * t.inertia_trace
    x[BIAS] = t.bias
    return x


def truth_normalized_inertia(cfg: ScenarioConfig) -> np.ndarray:
    return normalize_inertia(np.asarray(cfg.truth.inertia_normalized, dtype=float))


def filter_config(cfg: ScenarioConfig) -> FilterConfig:
    f, n = cfg.filter, cfg.noise
    return FilterConfig(
        ut=UtConfig(f.alpha, f.beta, f.kappa),
        substeps=f.substeps,
        pixel_sigma=f.meas_pixel_sigma if np.isfinite(f.meas_pixel_sigma) else n.pixel_sigma,
        depth_sigma=f.meas_depth_sigma if np.isfinite(f.meas_depth_sigma) else n.depth_sigma,
        adaptive_r=f.adaptive_r,
        adaptive_q=f.adaptive_q,
        min_visible=f.min_visible,
        mu=cfg.orbit.mu,
        inertia_floor=f.inertia_floor,
    )


def process_noise(cfg: ScenarioConfig) -> np.ndarray:
    f = cfg.filter
    return np.diag(np.repeat(
        [f.q_position, f.q_velocity, f.q_mrp, f.q_rate, f.q_inertia, f.q_bias], [3, 3, 3, 3, 6, 1]
    ))


def initial_filter_state(cfg: ScenarioConfig, rng: np.random.Generator) -> FilterState:
    """Draw the filter's initial estimate around truth and build ``P0`` for the regime."""
    f = cfg.filter
    truth = truth_initial_state(cfg)
    kin_sigma = np.repeat([f.p0_position, f.p0_velocity, f.p0_mrp, f.p0_rate], 3)
    x = np.zeros(STATE_DIM)
    x[:12] = truth[:12] + rng.standard_normal(12) * kin_sigma
    regime = cfg.montecarlo.regime
    if regime == "isotropic":
        x[INERTIA] = isotropic_prior()
        j_sigma = np.asarray(f.isotropic_sigma)
    elif regime == "informed":
        x[INERTIA] = sample_informed_prior(rng, truth_normalized_inertia(cfg), f.informed_sigma)
        j_sigma = np.asarray(f.informed_sigma)
    else:
        x[INERTIA] = truth_normalized_inertia(cfg)
        j_sigma = np.asarray(f.informed_sigma)
    x[BIAS] = f.bias_init
    P0 = np.diag(np.concatenate([kin_sigma, j_sigma, [f.p0_bias]]) ** 2)
    return FilterState(x=x, P=P0, Q=process_noise(cfg))


# --- single run --------------------------------------------------------------


@dataclass
class RunResult:
    """Per-epoch filter trace plus truth and derived inertia errors."""

    seed: str  # "<entropy>" or "<entropy>/<spawn key>"
    times: np.ndarray
    estimates: np.ndarray  # (K, 19)
    p_diag: np.ndarray  # (K, 19)
    innovation_norm: np.ndarray
    n_visible: np.ndarray
    updated: np.ndarray
    r_inflation: np.ndarray
    q_injection: np.ndarray
    truth: np.ndarray  # (K, 19)
    truth_inertia: np.ndarray  # (6,) trace-normalized
    inertia_error: np.ndarray  # (K, 6) normalized estimate - truth
    convergence_epoch: int | None
    diverged: bool = False
    failure_epoch: int | None = None
    frames: list[MeasurementFrame] = field(default_factory=list, repr=False)

    @property
    def final_error(self) -> np.ndarray:
        return self.inertia_error[-1]


def normalized_inertia_error(estimates: np.ndarray, truth_normalized: np.ndarray) -> np.ndarray:
    theta = estimates[..., INERTIA]
    tr = theta[..., 0] + theta[..., 1] + theta[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = np.where(tr[..., None] > 0.0, theta / tr[..., None], np.nan)
    return norm - truth_normalized


def convergence_epoch(errors: np.ndarray, threshold: float) -> int | None:
    """First 1-based epoch after which ``max |error| < threshold`` holds to the end."""
    ok = np.all(np.abs(errors) < threshold, axis=1)
    if not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    return int(bad[-1]) + 2 if bad.size else 1


def _seed_sequence(run_seed) -> np.random.SeedSequence:
    if isinstance(run_seed, np.random.SeedSequence):
        return run_seed
    return np.random.SeedSequence(int(run_seed))


def _seed_label(ss: np.random.SeedSequence) -> str:
    key = "/".join(str(k) for k in ss.spawn_key)
    return f"{ss.entropy}/{key}" if key else str(ss.entropy)


def run_single(cfg: ScenarioConfig, run_seed, keep_frames: bool = False) -> RunResult:
    """Simulate truth and run the filter for ``cfg.epochs`` epochs; deterministic in the seed."""
    ss = _seed_sequence(run_seed)
    # Derived statelessly (not via spawn()) so reusing a SeedSequence is safe.
    init_ss = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (0,))
    noise_ss = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (1,))
    init_rng = np.random.default_rng(init_ss)
    noise_rng = np.random.default_rng(noise_ss)

    cam = camera_from_config(cfg)
    markers = markers_from_config(cfg)
    fcfg = filter_config(cfg)
    mc, noise = cfg.montecarlo, cfg.noise
    K = cfg.epochs
    dt = 1.0 / mc.cadence
    torque = np.asarray(cfg.truth.torque, dtype=float)
    torque = torque if np.any(torque) else None
    truth_norm = truth_normalized_inertia(cfg)

    x_true = truth_initial_state(cfg)
    orbit = orbit_from_config(cfg)
    fs = initial_filter_state(cfg, init_rng)

    times = np.arange(1, K + 1) * dt
    est = np.full((K, STATE_DIM), np.nan)
    pdiag = np.full((K, STATE_DIM), np.nan)
    truth = np.zeros((K, STATE_DIM))
    innov = np.full(K, np.nan)
    nvis = np.zeros(K, dtype=int)
    upd = np.zeros(K, dtype=bool)
    rinf = np.zeros(K)
    qinj = np.zeros(K)
    frames = []
    diverged, failure = False, None
    outage = (noise.outage_start, noise.outage_start + noise.outage_duration)

    for k in range(K):
        t = times[k]
        x_true, orbit_next = propagate(x_true, orbit, dt, fcfg.substeps, cfg.orbit.mu, torque)
        truth[k] = x_true
        in_outage = noise.outage_duration > 0 and outage[0] < t <= outage[1]
        frame = simulate_frame(
            x_true, markers, cam, noise.pixel_sigma, noise.depth_sigma, noise_rng,
            epoch=t, force_dropout=in_outage,
        )
        if keep_frames:
            frames.append(frame)
        if not diverged:
            try:
                fs = predict(fs, orbit, dt, fcfg)
                info = None
                if len(frame) >= fcfg.min_visible:
                    try:
                        fs, info = update(fs, frame, cam, markers, fcfg)
                    except BehindCameraError:
                        info = None
                if info is None:
                    fs, info = dropout_inflate(fs, cfg=fcfg)
                    info.n_visible = len(frame)
                if not (np.all(np.isfinite(fs.x)) and np.all(np.isfinite(fs.P))):
                    raise FilterDivergence("non-finite filter state")
                if np.min(np.diag(fs.P)) < 0.0:
                    raise FilterDivergence("negative variance")
            except (FilterDivergence, DynamicsError, np.linalg.LinAlgError) as exc:
                log.warning("run %s diverged at epoch %d: %s", ss.entropy, k + 1, exc)
                diverged, failure = True, k + 1
            else:
                est[k] = fs.x
                pdiag[k] = np.diag(fs.P)
                innov[k] = info.innovation_norm
                nvis[k] = info.n_visible
                upd[k] = info.updated
                rinf[k] = info.r_inflation
                qinj[k] = info.q_injection
        orbit = orbit_next

    err = normalized_inertia_error(est, truth_norm)
    conv = None if diverged else convergence_epoch(err, mc.convergence_threshold)
    return RunResult(
        seed=_seed_label(ss),
        times=times, estimates=est, p_diag=pdiag, innovation_norm=innov, n_visible=nvis,
        updated=upd, r_inflation=rinf, q_injection=qinj, truth=truth, truth_inertia=truth_norm,
        inertia_error=err, convergence_epoch=conv, diverged=diverged, failure_epoch=failure,
        frames=frames,
    )


# --- Monte Carlo -------------------------------------------------------------


@dataclass
class McStats:
    """Cross-run statistics of the trace-normalized inertia error."""

    times: np.ndarray
    mean: np.ndarray  # (K, 6) mean bias per epoch
    std: np.ndarray  # (K, 6) population standard deviation per epoch
    converged_fraction: np.ndarray  # (K,) share of runs converged by each epoch
    steady_mean: np.ndarray  # (6,) window average of the mean bias
    steady_std: np.ndarray  # (6,) window average of the standard deviation
    window: float
    n_runs: int
    n_diverged: int
    convergence_epochs: list[int | None]
    diverged_seeds: list[int] = field(default_factory=list)


def compute_stats(results: list[RunResult], window: float) -> McStats:
    """Aggregate completed runs (diverged ones are counted but excluded)."""
    if not results:
        raise ValueError("no run results to aggregate")
    times = results[0].times
    if not 0.0 < window <= times[-1]:
        raise ValueError("steady-state window must lie inside the run duration")
    ok = [r for r in results if not r.diverged]
    n_div = len(results) - len(ok)
    K = len(times)
    if ok:
        errs = np.stack([r.inertia_error for r in ok])
        mean = errs.mean(axis=0)
        std = errs.std(axis=0)
    else:
        mean = std = np.full((K, 6), np.nan)
    conv = [r.convergence_epoch for r in ok]
    epochs = np.arange(1, K + 1)
    frac = np.array([sum(c is not None and c <= e for c in conv) for e in epochs], dtype=float)
    frac /= max(len(ok), 1)
    sel = times > times[-1] - window
    return McStats(
        times=times, mean=mean, std=std, converged_fraction=frac,
        steady_mean=mean[sel].mean(axis=0), steady_std=std[sel].mean(axis=0),
        window=float(window), n_runs=len(ok), n_diverged=n_div, convergence_epochs=conv,
        diverged_seeds=[i for i, r in enumerate(results) if r.diverged],
    )


def run_seeds(master_seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(int(master_seed)).spawn(n)


def _run_indexed(args):
    cfg, seed = args
    return run_single(cfg, seed)


def run_monte_carlo(
    cfg: ScenarioConfig,
    n: int | None = None,
    master_seed: int | None = None,
    workers: int | None = None,
    order: list[int] | None = None,
) -> tuple[McStats, list[RunResult]]:
    """Run ``n`` seeded trials and aggregate them in run-index order.

    ``order`` only changes the execution order (used to check that the
    result is order-independent); ``workers > 1`` fans out to processes.
    """
    mc = cfg.montecarlo
    n = mc.runs if n is None else n
    if n < 1:
        raise ValueError("need at least one Monte Carlo run")
    master_seed = mc.seed if master_seed is None else master_seed
    workers = mc.workers if workers is None else workers
    seeds = run_seeds(master_seed, n)
    order = list(range(n)) if order is None else list(order)
    if sorted(order) != list(range(n)):
        raise ValueError("order must be a permutation of the run indices")
    results: list[RunResult | None] = [None] * n
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, res in zip(order, pool.map(_run_indexed, [(cfg, seeds[i]) for i in order])):
                results[i] = res
    else:
        for i in order:
            results[i] = run_single(cfg, seeds[i])
    window = mc.steady_fraction * mc.duration
    return compute_stats(results, window), results
