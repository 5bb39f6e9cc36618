"""Synthetic RGB-D corner sensor and the filter-side measurement function.

Each visible corner marker yields a ``[u, d, v]`` triple: pixel column,
depth along the camera boresight plus a constant bias, pixel row.  The
camera looks along its own +Y axis; X maps to ``u`` and Z maps to ``v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .attitude import body_to_chaser
from .dynamics import BIAS, MRP, POS


class BehindCameraError(ValueError):
    """A point sits at or behind the camera's image plane."""


@dataclass(frozen=True)
class CameraModel:
    fx: float = 1920.0
    fy: float = 1280.0
    cx: float = 960.0
    cy: float = 640.0
    fov_deg: float = 45.0
    width: float = 1920.0
    height: float = 1280.0
    # Chaser -> camera rotation and camera position in the chaser frame (m).
    mount_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    mount_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        R = np.asarray(self.mount_rotation, dtype=float)
        if R.shape != (3, 3) or not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ValueError("mount_rotation must be a 3x3 rotation matrix")
        object.__setattr__(self, "mount_rotation", R)
        object.__setattr__(self, "mount_offset", np.asarray(self.mount_offset, dtype=float).reshape(3))


@dataclass(frozen=True)
class MarkerSet:
    """Body-frame corner positions (m) with an outward normal per corner."""

    positions: np.ndarray
    normals: np.ndarray

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=float)
        nrm = np.asarray(self.normals, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 4:
            raise ValueError("need at least 4 markers given as an (N, 3) array")
        if nrm.shape != pos.shape:
            raise ValueError("one normal per marker is required")
        if len(np.unique(np.round(pos, 12), axis=0)) != len(pos):
            raise ValueError("duplicate marker positions")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "normals", nrm / np.linalg.norm(nrm, axis=1, keepdims=True))

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def box(cls, dims=(10.0, 4.0, 4.0)) -> "MarkerSet":
        """The 8 corners of a centred box; each normal averages its three faces."""
        half = np.asarray(dims, dtype=float) / 2.0
        signs = np.array(list(product((1.0, -1.0), repeat=3)))
        return cls(signs * half, signs / np.sqrt(3.0))


@dataclass(frozen=True)
class MeasurementFrame:
    epoch: float
    marker_ids: np.ndarray  # visible markers, ascending
    values: np.ndarray  # (n_visible, 3) rows of [u, d, v]
    visible: np.ndarray  # (N,) bool

    @property
    def z(self) -> np.ndarray:
        """Stacked measurement vector ``[u0, d0, v0, u1, d1, v1, ...]``."""
        return self.values.reshape(-1)

    def __len__(self) -> int:
        return len(self.marker_ids)


def marker_to_camera(x: np.ndarray, marker: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Camera-frame coordinates (m) of body-frame marker(s) for state(s) ``x``.

    Broadcasts: ``x`` may be ``(..., 19)`` and ``marker`` ``(M, 3)``, giving
    ``(..., M, 3)``.
    """
    x = np.asarray(x, dtype=float)
    marker = np.asarray(marker, dtype=float)
    C = body_to_chaser(x[..., MRP])
    if marker.ndim == 1:
        chaser = np.einsum("...ij,j->...i", C, marker) + x[..., POS]
    else:
        chaser = np.einsum("...ij,mj->...mi", C, marker) + x[..., POS][..., None, :]
    return (chaser - cam.mount_offset) @ cam.mount_rotation.T


def camera_project(pt: np.ndarray, cam: CameraModel, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection ``u = cx + fx X/Y``, ``v = cy + fy Z/Y``."""
    pt = np.asarray(pt, dtype=float)
    Y = pt[..., 1]
    if check and np.any(Y <= 0.0):
        raise BehindCameraError("point is behind the camera")
    return cam.cx + cam.fx * pt[..., 0] / Y, cam.cy + cam.fy * pt[..., 2] / Y


def visibility_mask(x: np.ndarray, markers: MarkerSet, cam: CameraModel) -> np.ndarray:
    """Line-of-sight visibility of every marker for a single state.

    A marker counts as visible when it is in front of the camera, projects
    inside the image and its outward normal faces the camera.
    """
    pts = marker_to_camera(x, markers.positions, cam)
    Y = pts[:, 1]
    front = Y > 0.0
    u, v = camera_project(pts, cam, check=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        inside = front & (u >= 0.0) & (u <= cam.width) & (v >= 0.0) & (v <= cam.height)
    normals_cam = (np.asarray(body_to_chaser(x[MRP])) @ markers.normals.T).T @ cam.mount_rotation.T
    facing = np.einsum("ij,ij->i", normals_cam, pts) < 0.0
    return front & inside & facing


def visibility(marker_id: int, x: np.ndarray, markers: MarkerSet, cam: CameraModel) -> bool:
    return bool(visibility_mask(x, markers, cam)[marker_id])


def simulate_frame(
    x_true: np.ndarray,
    markers: MarkerSet,
    cam: CameraModel,
    pixel_sigma: float = 1.0,
    depth_sigma: float = 0.05,
    rng: np.random.Generator | int | None = None,
    epoch: float = 0.0,
    force_dropout: bool = False,
) -> MeasurementFrame:
    """Noisy ``[u, d, v]`` observations of every visible marker.

    ``d = Y + b`` with ``b`` read from the truth state.  Noisy pixels are
    clipped to the image so emitted frames always respect the bounds.
    ``force_dropout`` blanks the frame (simulated outage).
    """
    if pixel_sigma < 0 or depth_sigma < 0:
        raise ValueError("noise standard deviations must be non-negative")
    rng = np.random.default_rng(rng)
    x_true = np.asarray(x_true, dtype=float)
    mask = visibility_mask(x_true, markers, cam)
    if force_dropout:
        mask = np.zeros_like(mask)
    ids = np.flatnonzero(mask)
    pts = marker_to_camera(x_true, markers.positions[ids], cam)
    u, v = camera_project(pts, cam, check=False)
    d = pts[:, 1] + x_true[BIAS]
    noise = rng.standard_normal((len(ids), 3)) * np.array([pixel_sigma, depth_sigma, pixel_sigma])
    vals = np.column_stack([u, d, v]) + noise
    vals[:, 0] = np.clip(vals[:, 0], 0.0, cam.width)
    vals[:, 2] = np.clip(vals[:, 2], 0.0, cam.height)
    vals[:, 1] = np.maximum(vals[:, 1], np.finfo(float).tiny)
    return MeasurementFrame(epoch=float(epoch), marker_ids=ids, values=vals, visible=mask)


def predict_measurements(
    x: np.ndarray, visible_ids: np.ndarray, markers: MarkerSet, cam: CameraModel
) -> np.ndarray:
    """Measurement function ``h``: stacked ``[u, d, v]`` for the given markers.

    Accepts a single state or a ``(n, 19)`` stack of sigma points.  Raises
    :class:`BehindCameraError` if any marker lands behind the camera.
    """
    ids = np.asarray(visible_ids, dtype=int)
    if ids.size == 0:
        raise ValueError("no visible markers to predict")
    x = np.asarray(x, dtype=float)
    pts = marker_to_camera(x, markers.positions[ids], cam)
    u, v = camera_project(pts, cam)
    d = pts[..., 1] + x[..., BIAS][..., None]
    return np.stack([u, d, v], axis=-1).reshape(x.shape[:-1] + (3 * ids.size,))


def measurement_noise(n_visible: int, pixel_sigma: float, depth_sigma: float) -> np.ndarray:
    """Block-diagonal ``R`` over the visible markers, ``[u, d, v]`` per block."""
    return np.diag(np.tile([pixel_sigma**2, depth_sigma**2, pixel_sigma**2], n_visible))
