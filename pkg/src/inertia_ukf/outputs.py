"""CSV and JSON artifacts.

Floats are written with 17 significant digits so reruns can be compared
byte for byte.  Column layouts:

measurement log
    ``epoch, marker_id, u, d, v, visible`` - one row per marker per epoch;
    ``u``, ``d``, ``v`` are empty for markers that are not visible.
filter trace
    ``epoch, time``, the 19 estimates (``est_<name>``), the 19 covariance
    diagonal entries (``var_<name>``), ``innovation_norm``, ``n_visible``,
    ``updated``, ``r_inflation_trace``, ``q_injection_trace``.
Monte Carlo statistics
    ``epoch, time``, ``mean_<J>`` and ``std_<J>`` for the six normalized
    inertia components, ``converged_fraction``, ``n_runs``, ``n_diverged``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .dynamics import INERTIA, INERTIA_NAMES, STATE_NAMES
from .measurement import MeasurementFrame
from .scenario import McStats, RunResult

TRACE_COLUMNS = (
    ["epoch", "time"]
    + [f"est_{n}" for n in STATE_NAMES]
    + [f"var_{n}" for n in STATE_NAMES]
    + ["innovation_norm", "n_visible", "updated", "r_inflation_trace", "q_injection_trace"]
)
MEASUREMENT_COLUMNS = ["epoch", "marker_id", "u", "d", "v", "visible"]
STATS_COLUMNS = (
    ["epoch", "time"]
    + [f"mean_{n}" for n in INERTIA_NAMES]
    + [f"std_{n}" for n in INERTIA_NAMES]
    + ["converged_fraction", "n_runs", "n_diverged"]
)


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def _write_rows(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def write_measurement_log(path: Path, frames: list[MeasurementFrame], n_markers: int) -> None:
    rows = []
    for k, fr in enumerate(frames, start=1):
        lookup = {int(m): fr.values[j] for j, m in enumerate(fr.marker_ids)}
        for m in range(n_markers):
            if m in lookup:
                u, d, v = lookup[m]
                rows.append([k, m, fmt(u), fmt(d), fmt(v), 1])
            else:
                rows.append([k, m, "", "", "", int(bool(fr.visible[m]))])
    _write_rows(path, MEASUREMENT_COLUMNS, rows)


def write_filter_trace(path: Path, run: RunResult) -> None:
    rows = []
    for k in range(len(run.times)):
        rows.append(
            [k + 1, fmt(run.times[k])]
            + [fmt(v) for v in run.estimates[k]]
            + [fmt(v) for v in run.p_diag[k]]
            + [fmt(run.innovation_norm[k]), int(run.n_visible[k]), int(run.updated[k]),
               fmt(run.r_inflation[k]), fmt(run.q_injection[k])]
        )
    _write_rows(path, TRACE_COLUMNS, rows)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    return obj


def run_summary(run: RunResult) -> dict:
    last = run.estimates[-1]
    ok = np.all(np.isfinite(last))
    return _clean({
        "seed": run.seed,
        "epochs": len(run.times),
        "diverged": run.diverged,
        "failure_epoch": run.failure_epoch,
        "convergence_epoch": run.convergence_epoch,
        "updates": int(np.sum(run.updated)),
        "dropouts": int(len(run.times) - np.sum(run.updated)),
        "truth_inertia_normalized": dict(zip(INERTIA_NAMES, run.truth_inertia)),
        "final_inertia_normalized": dict(zip(INERTIA_NAMES, run.inertia_error[-1] + run.truth_inertia)) if ok else None,
        "final_inertia_error": dict(zip(INERTIA_NAMES, run.inertia_error[-1])) if ok else None,
        "final_bias": float(last[-1]) if ok else None,
        "truth_bias": float(run.truth[-1, -1]),
    })


def write_json(path: Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def write_stats_csv(path: Path, stats: McStats) -> None:
    rows = []
    for k in range(len(stats.times)):
        rows.append(
            [k + 1, fmt(stats.times[k])]
            + [fmt(v) for v in stats.mean[k]]
            + [fmt(v) for v in stats.std[k]]
            + [fmt(stats.converged_fraction[k]), stats.n_runs, stats.n_diverged]
        )
    _write_rows(path, STATS_COLUMNS, rows)


def mc_summary(stats: McStats, regime: str, master_seed: int, truth_inertia: np.ndarray) -> dict:
    conv = [c for c in stats.convergence_epochs if c is not None]
    diag = np.abs(np.asarray(truth_inertia)[:3])
    return _clean({
        "regime": regime,
        "master_seed": int(master_seed),
        "n_runs": stats.n_runs,
        "n_diverged": stats.n_diverged,
        "diverged_runs": stats.diverged_seeds,
        "steady_window_s": stats.window,
        "steady_mean_bias": dict(zip(INERTIA_NAMES, stats.steady_mean)),
        "steady_std": dict(zip(INERTIA_NAMES, stats.steady_std)),
        "steady_std_percent_of_truth": dict(zip(INERTIA_NAMES[:3], 100.0 * stats.steady_std[:3] / diag)),
        "convergence_epochs": stats.convergence_epochs,
        "n_converged": len(conv),
        "convergence_epoch_median": float(np.median(conv)) if conv else None,
        "convergence_epoch_max": max(conv) if conv else None,
    })


class StatsFormatError(ValueError):
    pass


def read_stats_csv(path: Path) -> dict[str, np.ndarray]:
    """Load a statistics CSV written by :func:`write_stats_csv`."""
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise StatsFormatError(f"{path}: empty file") from None
    if header != STATS_COLUMNS:
        raise StatsFormatError(f"{path}: unexpected header {header!r}")
    rows = [r for r in reader if r]
    if not rows:
        raise StatsFormatError(f"{path}: no data rows")
    try:
        data = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise StatsFormatError(f"{path}: {exc}") from None
    if data.shape[1] != len(STATS_COLUMNS):
        raise StatsFormatError(f"{path}: ragged rows")
    return {name: data[:, i] for i, name in enumerate(STATS_COLUMNS)}


def format_report(cols: dict[str, np.ndarray], steady_fraction: float = 0.2) -> str:
    """Human-readable summary of a statistics CSV."""
    K = len(cols["epoch"])
    start = K - max(1, int(round(steady_fraction * K)))
    frac = cols["converged_fraction"]
    n_runs = int(cols["n_runs"][0])
    lines = [
        f"Monte Carlo summary: {n_runs} completed runs, {int(cols['n_diverged'][0])} diverged, {K} epochs",
        f"Steady state over epochs {int(cols['epoch'][start])}-{int(cols['epoch'][-1])}:",
        f"  {'component':<10}{'mean bias':>14}{'std':>14}",
    ]
    for n in INERTIA_NAMES:
        m = cols[f"mean_{n}"][start:].mean()
        s = cols[f"std_{n}"][start:].mean()
        lines.append(f"  {n:<10}{m:>14.3e}{s:>14.3e}")
    lines.append("Convergence (share of runs converged by epoch):")
    for q in (0.5, 0.9, 1.0):
        hit = np.flatnonzero(frac >= q - 1e-12)
        at = f"epoch {int(cols['epoch'][hit[0]])}" if hit.size else "not reached"
        lines.append(f"  {int(q * 100):>3d}% : {at}")
    lines.append(f"  never converged: {round((1.0 - frac[-1]) * n_runs)} run(s)")
    return "\n".join(lines) + "\n"
