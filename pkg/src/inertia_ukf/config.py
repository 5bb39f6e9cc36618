"""Scenario configuration: dataclasses plus an INI-style reader.

The file has the sections ``orbit``, ``truth``, ``camera``, ``markers``,
``noise``, ``filter`` and ``montecarlo``; every key is optional and falls
back to the defaults below.  Vectors are comma-separated numbers.  Unknown
sections or keys are rejected.  See ``docs/config.md`` for the full list.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .dynamics import MU_EARTH, NOMINAL_NORMALIZED_INERTIA

REGIMES = ("isotropic", "informed", "truth")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key and line."""


def _vec(*values: float) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class OrbitConfig:
    radius: float = 7.178e6  # m, 800 km altitude
    radius_rate: float = 0.0  # m/s
    anomaly: float = 0.0  # rad
    anomaly_rate: float = math.nan  # rad/s; NaN selects the circular rate
    mu: float = MU_EARTH


@dataclass(frozen=True)
class TruthConfig:
    position: tuple[float, ...] = _vec(0.0, 30.0, 0.0)  # m, LVLH
    velocity: tuple[float, ...] = _vec(0.0, 0.0, 0.0)  # m/s
    mrp: tuple[float, ...] = _vec(0.1, -0.2, 0.15)
    rate_deg: tuple[float, ...] = _vec(2.0, 3.0, 1.0)  # deg/s, target body frame
    inertia_normalized: tuple[float, ...] = tuple(NOMINAL_NORMALIZED_INERTIA)
    inertia_trace: float = 1.0e5  # kg m^2
    bias: float = 0.5  # m
    torque: tuple[float, ...] = _vec(0.0, 0.0, 0.0)  # N m, body frame


@dataclass(frozen=True)
class CameraConfig:
    fx: float = 1920.0
    fy: float = 1280.0
    cx: float = 960.0
    cy: float = 640.0
    fov_deg: float = 45.0
    width: float = 1920.0
    height: float = 1280.0
    mount_mrp: tuple[float, ...] = _vec(0.0, 0.0, 0.0)  # chaser -> camera
    mount_offset: tuple[float, ...] = _vec(0.0, 0.0, 0.0)  # m, chaser frame


@dataclass(frozen=True)
class MarkersConfig:
    bus_dims: tuple[float, ...] = _vec(10.0, 4.0, 4.0)  # m, along body x, y, z


@dataclass(frozen=True)
class NoiseConfig:
    pixel_sigma: float = 1.0  # px
    depth_sigma: float = 0.05  # m
    outage_start: float = -1.0  # s; negative disables the forced outage
    outage_duration: float = 0.0  # s


@dataclass(frozen=True)
class FilterSection:
    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0
    substeps: int = 10
    q_position: float = 1e-6
    q_velocity: float = 1e-8
    q_mrp: float = 1e-7
    q_rate: float = 1e-8
    q_inertia: float = 1e-10
    q_bias: float = 1e-8
    p0_position: float = 0.1  # 1-sigma, m
    p0_velocity: float = 0.01  # m/s
    p0_mrp: float = 0.01
    p0_rate: float = 0.002  # rad/s
    p0_bias: float = 1.0  # m
    bias_init: float = 0.0  # m
    informed_sigma: tuple[float, ...] = _vec(0.06, 0.06, 0.06, 0.05, 0.03, 0.03)
    isotropic_sigma: tuple[float, ...] = _vec(0.1, 0.1, 0.1, 0.05, 0.05, 0.05)
    meas_pixel_sigma: float = math.nan  # NaN: use noise.pixel_sigma
    meas_depth_sigma: float = math.nan  # NaN: use noise.depth_sigma
    adaptive_r: bool = True
    adaptive_q: bool = True
    min_visible: int = 3
    inertia_floor: float = 0.02  # fraction of ||J||_F; 0 keeps only the singularity guard


@dataclass(frozen=True)
class MonteCarloConfig:
    regime: str = "isotropic"
    runs: int = 20
    seed: int = 2026
    duration: float = 2000.0  # s
    cadence: float = 1.0  # Hz
    convergence_threshold: float = 0.01
    steady_fraction: float = 0.2
    workers: int = 1


@dataclass(frozen=True)
class ScenarioConfig:
    orbit: OrbitConfig = field(default_factory=OrbitConfig)
    truth: TruthConfig = field(default_factory=TruthConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    markers: MarkersConfig = field(default_factory=MarkersConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    filter: FilterSection = field(default_factory=FilterSection)
    montecarlo: MonteCarloConfig = field(default_factory=MonteCarloConfig)

    def __post_init__(self) -> None:
        validate(self)

    def with_(self, **sections: dict[str, Any]) -> "ScenarioConfig":
        """Copy with per-section overrides, e.g. ``cfg.with_(noise={"pixel_sigma": 0})``."""
        kw = {}
        for name, values in sections.items():
            kw[name] = dataclasses.replace(getattr(self, name), **values)
        return dataclasses.replace(self, **kw)

    @property
    def epochs(self) -> int:
        return int(round(self.montecarlo.duration * self.montecarlo.cadence))


_VEC_LEN = {
    ("truth", "position"): 3, ("truth", "velocity"): 3, ("truth", "mrp"): 3,
    ("truth", "rate_deg"): 3, ("truth", "inertia_normalized"): 6, ("truth", "torque"): 3,
    ("camera", "mount_mrp"): 3, ("camera", "mount_offset"): 3, ("markers", "bus_dims"): 3,
    ("filter", "informed_sigma"): 6, ("filter", "isotropic_sigma"): 6,
}


def validate(cfg: ScenarioConfig) -> None:
    """Check cross-field invariants; raise :class:`ConfigError` naming the key."""

    def need(ok: bool, key: str, msg: str) -> None:
        if not ok:
            raise ConfigError(f"{key}: {msg}")

    for (sec, key), n in _VEC_LEN.items():
        need(len(getattr(getattr(cfg, sec), key)) == n, f"{sec}.{key}", f"expected {n} values")
    need(cfg.orbit.radius > 0, "orbit.radius", "must be positive")
    need(cfg.orbit.mu > 0, "orbit.mu", "must be positive")
    need(cfg.truth.inertia_trace > 0, "truth.inertia_trace", "must be positive")
    J = np.array(cfg.truth.inertia_normalized)
    need(J[:3].sum() > 0, "truth.inertia_normalized", "trace must be positive")
    Jm = np.array([[J[0], J[3], J[4]], [J[3], J[1], J[5]], [J[4], J[5], J[2]]])
    ev = np.linalg.eigvalsh(Jm)
    need(ev[0] > 0, "truth.inertia_normalized", "must be positive definite")
    need(ev[0] + ev[1] >= ev[2] * (1 - 1e-12), "truth.inertia_normalized", "principal moments violate the triangle inequality")
    c = cfg.camera
    need(c.fx > 0 and c.fy > 0, "camera.fx", "focal lengths must be positive")
    need(0 < c.cx < c.width, "camera.cx", "must lie inside the image width")
    need(0 < c.cy < c.height, "camera.cy", "must lie inside the image height")
    need(all(d > 0 for d in cfg.markers.bus_dims), "markers.bus_dims", "must be positive")
    need(cfg.noise.pixel_sigma >= 0, "noise.pixel_sigma", "must be non-negative")
    need(cfg.noise.depth_sigma >= 0, "noise.depth_sigma", "must be non-negative")
    need(cfg.noise.outage_duration >= 0, "noise.outage_duration", "must be non-negative")
    f = cfg.filter
    need(f.alpha != 0, "filter.alpha", "must be non-zero")
    need(f.alpha**2 * (19 + f.kappa) > 0, "filter.kappa", "L + lambda must be positive")
    need(f.substeps >= 1, "filter.substeps", "must be at least 1")
    for key in ("q_position", "q_velocity", "q_mrp", "q_rate", "q_inertia", "q_bias",
                "p0_position", "p0_velocity", "p0_mrp", "p0_rate", "p0_bias"):
        need(getattr(f, key) >= 0, f"filter.{key}", "must be non-negative")
    need(all(s >= 0 for s in f.informed_sigma), "filter.informed_sigma", "must be non-negative")
    need(all(s >= 0 for s in f.isotropic_sigma), "filter.isotropic_sigma", "must be non-negative")
    need(f.min_visible >= 1, "filter.min_visible", "must be at least 1")
    need(0.0 <= f.inertia_floor < 0.5, "filter.inertia_floor", "must lie in [0, 0.5)")
    m = cfg.montecarlo
    need(m.regime in REGIMES, "montecarlo.regime", f"must be one of {', '.join(REGIMES)}")
    need(m.runs >= 1, "montecarlo.runs", "must be at least 1")
    need(m.duration > 0, "montecarlo.duration", "must be positive")
    need(m.cadence > 0, "montecarlo.cadence", "must be positive")
    need(m.convergence_threshold > 0, "montecarlo.convergence_threshold", "must be positive")
    need(0 < m.steady_fraction <= 1, "montecarlo.steady_fraction", "must be in (0, 1]")
    need(m.workers >= 1, "montecarlo.workers", "must be at least 1")


_SECTION_TYPES = {f.name: f.default_factory for f in fields(ScenarioConfig)}


def _coerce(raw: str, default: Any, where: str) -> Any:
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(t) for t in raw.split(","))
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _line_index(text: str) -> dict[tuple[str, str], int]:
    index: dict[tuple[str, str], int] = {}
    section = ""
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if m := re.match(r"^\[([^\]]+)\]", s):
            section = m.group(1).strip().lower()
            index[(section, "")] = n
        elif m := re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s):
            index[(section, m.group(1).strip().lower())] = n
    return index


def parse_config_text(text: str, source: str = "<config>") -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _line_index(text)
    sections: dict[str, Any] = {}
    for sec in parser.sections():
        name = sec.strip().lower()
        if name not in _SECTION_TYPES:
            raise ConfigError(f"{source}:{lines.get((name, ''), '?')}: unknown section [{sec}]")
        defaults = _SECTION_TYPES[name]()
        known = {f.name: getattr(defaults, f.name) for f in fields(defaults)}
        values = {}
        for key, raw in parser.items(sec):
            where = f"{source}:{lines.get((name, key), '?')}: {name}.{key}"
            if key not in known:
                raise ConfigError(f"{where}: unknown key")
            values[key] = _coerce(raw, known[key], where)
        try:
            sections[name] = dataclasses.replace(defaults, **values)
        except TypeError as exc:
            raise ConfigError(f"{source}: [{name}] {exc}") from None
    try:
        return ScenarioConfig(**sections)
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        sec, _, k = key.partition(".")
        line = lines.get((sec, k))
        raise ConfigError(f"{source}:{line if line else '?'}: {exc}") from None


def parse_config(path: str | Path) -> ScenarioConfig:
    """Read a scenario file; missing sections and keys take their defaults."""
    path = Path(path)
    return parse_config_text(path.read_text(), source=str(path))


def dump_config(cfg: ScenarioConfig) -> str:
    """Render a config back to the INI format (round-trips through :func:`parse_config_text`)."""
    out = []
    for sec in fields(cfg):
        obj = getattr(cfg, sec.name)
        out.append(f"[{sec.name}]")
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                s = ", ".join(repr(float(t)) for t in v)
            elif isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v)
            out.append(f"{f.name} = {s}")
        out.append("")
    return "\n".join(out)
