import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from inertia_ukf.attitude import mrp_to_rotation
from inertia_ukf.dynamics import BIAS, MRP, POS, STATE_DIM
from inertia_ukf.measurement import (
    BehindCameraError, CameraModel, MarkerSet, camera_project, marker_to_camera,
    measurement_noise, predict_measurements, simulate_frame, visibility, visibility_mask,
)

CAM = CameraModel()
BOX = MarkerSet.box()


def state(p=(0.0, 0.0, 0.0), r=(0.0, 30.0, 0.0), b=0.0):
    x = np.zeros(STATE_DIM)
    x[POS] = r
    x[MRP] = p
    x[BIAS] = b
    return x


def facing_state():
    # Rotate the box so its -Y face, and the corners on it, look at the camera.
    return state(p=np.tan(np.deg2rad(20) / 4) * np.array([1.0, 0.0, 1.0]) / np.sqrt(2))


def test_table1_defaults():
    assert (CAM.fx, CAM.fy, CAM.cx, CAM.cy, CAM.fov_deg) == (1920, 1280, 960, 640, 45)


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraModel(fx=0.0)
    with pytest.raises(ValueError):
        CameraModel(cx=5000.0)
    with pytest.raises(ValueError):
        CameraModel(mount_rotation=2 * np.eye(3))


def test_markerset_validation_and_box():
    assert len(BOX) == 8
    assert np.allclose(np.abs(BOX.positions), [5.0, 2.0, 2.0])
    assert np.allclose(np.linalg.norm(BOX.normals, axis=1), 1.0)
    with pytest.raises(ValueError):
        MarkerSet(np.zeros((3, 3)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        MarkerSet(np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), np.ones((4, 3)))


def test_marker_to_camera_translation_and_half_turn():
    assert np.allclose(marker_to_camera(state(r=(0, 10, 0)), np.zeros(3), CAM), [0, 10, 0])
    pt = marker_to_camera(state(p=(1, 0, 0), r=(0, 0, 0)), np.array([1.0, 0, 0]), CAM)
    assert np.allclose(pt, [1, 0, 0], atol=1e-15)


@settings(max_examples=50)
@given(
    arrays(np.float64, 3, elements=st.floats(-1, 1)),
    arrays(np.float64, 3, elements=st.floats(-50, 50)),
    arrays(np.float64, 3, elements=st.floats(-6, 6)),
    arrays(np.float64, 3, elements=st.floats(-0.5, 0.5)),
)
def test_marker_to_camera_transform_chain(p, r, m, mount_p):
    mount = mrp_to_rotation(mount_p)
    cam = CameraModel(mount_rotation=mount, mount_offset=np.array([0.1, -0.2, 0.3]))
    x = state(p=p, r=r)
    chaser = mrp_to_rotation(p).T @ m + r
    expected = mount @ (chaser - cam.mount_offset)
    assert np.allclose(marker_to_camera(x, m, cam), expected, atol=1e-10)


def test_project_principal_point_and_offsets():
    assert np.allclose(camera_project(np.array([0.0, 10.0, 0.0]), CAM), (960, 640))
    u, v = camera_project(np.array([1.0, 10.0, 0.0]), CAM)
    assert u == pytest.approx(1152.0) and v == pytest.approx(640.0)
    u, v = camera_project(np.array([0.0, 10.0, 1.0]), CAM)
    assert v == pytest.approx(768.0)
    with pytest.raises(BehindCameraError):
        camera_project(np.array([0.0, -5.0, 0.0]), CAM)


def test_visibility_cases():
    # Boresight marker with a normal facing back at the camera.
    ms = MarkerSet(np.array([[0, -1, 0], [1, -1, 0], [0, -1, 1], [1, -1, 1.0]]), np.tile([0, -1.0, 0], (4, 1)))
    assert visibility(0, state(), ms, CAM)
    # Behind the camera.
    assert not visibility(0, state(r=(0, -30, 0)), ms, CAM)
    # Same geometry but the normal points away.
    away = MarkerSet(ms.positions, np.tile([0, 1.0, 0], (4, 1)))
    pts = marker_to_camera(state(), away.positions, CAM)
    assert np.all(np.einsum("ij,ij->i", away.normals, pts) > 0)
    assert not visibility(0, state(), away, CAM)
    # Outside the image.
    assert not visibility(0, state(r=(100, 30, 0)), ms, CAM)


def test_box_visibility_counts():
    mask = visibility_mask(facing_state(), BOX, CAM)
    assert mask.sum() >= 3
    # Only corners on the near (-Y) side can face the camera.
    assert np.all(BOX.positions[mask, 1] < 0) or mask.sum() == 0


def test_simulate_frame_noiseless_and_bias():
    x = facing_state()
    fr = simulate_frame(x, BOX, CAM, 0.0, 0.0, rng=1)
    pts = marker_to_camera(x, BOX.positions[fr.marker_ids], CAM)
    u, v = camera_project(pts, CAM)
    assert np.allclose(fr.values, np.column_stack([u, pts[:, 1], v]))
    xb = x.copy()
    xb[BIAS] = 0.5
    frb = simulate_frame(xb, BOX, CAM, 0.0, 0.0, rng=1)
    assert np.allclose(frb.values[:, 1] - pts[:, 1], 0.5, atol=1e-12)
    assert np.array_equal(frb.values[:, [0, 2]], fr.values[:, [0, 2]])


def test_simulate_frame_deterministic_and_dropout():
    x = facing_state()
    a = simulate_frame(x, BOX, CAM, rng=42)
    b = simulate_frame(x, BOX, CAM, rng=42)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.marker_ids, b.marker_ids)
    c = simulate_frame(x, BOX, CAM, rng=43)
    assert not np.array_equal(a.values, c.values)
    d = simulate_frame(x, BOX, CAM, rng=42, force_dropout=True)
    assert len(d) == 0 and d.z.size == 0
    with pytest.raises(ValueError):
        simulate_frame(x, BOX, CAM, pixel_sigma=-1.0)


def test_simulate_frame_respects_image_bounds():
    x = facing_state()
    fr = simulate_frame(x, BOX, CAM, pixel_sigma=5000.0, rng=0)
    assert np.all((fr.values[:, 0] >= 0) & (fr.values[:, 0] <= CAM.width))
    assert np.all((fr.values[:, 2] >= 0) & (fr.values[:, 2] <= CAM.height))


def test_predict_matches_noiseless_frame():
    x = facing_state()
    x[BIAS] = 0.3
    fr = simulate_frame(x, BOX, CAM, 0.0, 0.0, rng=0)
    assert np.allclose(predict_measurements(x, fr.marker_ids, BOX, CAM), fr.z, atol=1e-10)


def test_predict_bias_linearity_and_batch():
    x = facing_state()
    ids = np.flatnonzero(visibility_mask(x, BOX, CAM))
    z0 = predict_measurements(x, ids, BOX, CAM)
    x2 = x.copy()
    x2[BIAS] += 0.7
    dz = predict_measurements(x2, ids, BOX, CAM) - z0
    assert np.allclose(dz[1::3], 0.7, atol=1e-12)
    assert np.allclose(dz[0::3], 0.0) and np.allclose(dz[2::3], 0.0)
    batch = predict_measurements(np.stack([x, x2]), ids, BOX, CAM)
    assert np.allclose(batch[0], z0) and np.allclose(batch[1], z0 + dz)


def test_predict_ordering_five_markers():
    rng = np.random.default_rng(3)
    pos = rng.uniform(-1, 1, (7, 3))
    ms = MarkerSet(pos, np.tile([0, -1.0, 0], (7, 1)))
    x = state(r=(0, 20, 0))
    ids = np.array([0, 2, 3, 5, 6])
    z = predict_measurements(x, ids, ms, CAM)
    for j, m in enumerate(ids):
        single = predict_measurements(x, [m], ms, CAM)
        assert np.allclose(z[3 * j:3 * j + 3], single)


def test_predict_errors():
    with pytest.raises(ValueError):
        predict_measurements(state(), [], BOX, CAM)
    with pytest.raises(BehindCameraError):
        predict_measurements(state(r=(0, 1, 0)), [0, 1, 2, 3], BOX, CAM)


def test_measurement_noise_layout():
    R = measurement_noise(2, 1.5, 0.1)
    assert np.allclose(np.diag(R), [2.25, 0.01, 2.25, 2.25, 0.01, 2.25])
    assert np.count_nonzero(R - np.diag(np.diag(R))) == 0
