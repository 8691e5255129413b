import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcdiff.geometry import CameraView, PointCloud, look_at, normalize_cloud, orbit_camera, project_point


def ident(fx=100.0, c=64.0, size=128):
    return CameraView(np.eye(3), np.zeros(3), fx, fx, c, c, size, size)


def test_optical_axis_hits_principal_point():
    assert project_point(ident(), (0, 0, 1)) == (64.0, 64.0, 1.0)


def test_behind_camera_is_none():
    assert project_point(ident(), (0, 0, -1)) is None
    assert project_point(ident(), (0, 0, 1e-7)) is None


def test_hand_evaluated_projection():
    u, v, d = project_point(ident(), (0.5, -0.25, 2))
    assert (u, v, d) == pytest.approx((89.0, 51.5, 2.0), abs=1e-12)


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    cam = orbit_camera(0.3, 0.4, 1.8, fx=90, fy=95, cx=60, cy=61, width=121, height=120)
    pts = rng.uniform(-0.5, 0.5, (50, 3))
    u, v, d, ok = cam.project(pts)
    for i, p in enumerate(pts):
        res = project_point(cam, p)
        assert ok[i] and res == pytest.approx((u[i], v[i], d[i]), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 5))
def test_projection_scale_consistent(lam, x, y, z):
    a = project_point(ident(), (x, y, z))
    b = project_point(ident(), (lam * x, lam * y, lam * z))
    assert a[:2] == pytest.approx(b[:2], rel=1e-9, abs=1e-9)


def test_rotation_must_be_orthonormal():
    with pytest.raises(ValueError, match="orthonormal"):
        CameraView(np.diag([1.0, 1.0, 1.0 + 1e-6]), np.zeros(3), 1, 1, 0, 0, 4, 4)
    with pytest.raises(ValueError):
        CameraView(np.eye(3), np.zeros(3), 0, 1, 0, 0, 4, 4)
    with pytest.raises(ValueError):
        CameraView(np.eye(3), np.zeros(3), 1, 1, 0, 0, 0, 4)


def test_camera_json_round_trip():
    cam = orbit_camera(1.0, 0.5, 1.8, fx=100, fy=100, cx=68, cy=68, width=137, height=137)
    doc = json.loads(cam.to_json())
    assert set(doc) == {"rotation", "translation", "fx", "fy", "cx", "cy", "width", "height"}
    assert len(doc["rotation"]) == 9
    back = CameraView.from_json(cam.to_json())
    assert np.array_equal(back.rotation, cam.rotation)
    assert np.array_equal(back.translation, cam.translation)


def test_look_at_centers_target_and_keeps_up():
    cam = look_at((1.0, 1.0, 0.8), (0, 0, 0), fx=100, fy=100, cx=50, cy=50, width=101, height=101)
    u, v, _ = project_point(cam, (0, 0, 0))
    assert (u, v) == pytest.approx((50, 50), abs=1e-9)
    # a point above the target lands higher in the image (smaller v)
    assert project_point(cam, (0, 0, 0.1))[1] < 50
    assert np.allclose(cam.center, (1.0, 1.0, 0.8))


def test_normalize_cube_corners():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    out = normalize_cloud(PointCloud(corners))
    assert out.scale == 1.0 and not out.degenerate
    assert np.allclose(out.center, 0.5)
    assert np.allclose(np.abs(out.cloud.positions), 0.5)


def test_normalize_single_point_is_degenerate():
    out = normalize_cloud(PointCloud([[5.0, 5.0, 5.0]]))
    assert out.degenerate and out.scale == 1.0
    assert np.array_equal(out.cloud.positions, [[0.0, 0.0, 0.0]])
    assert np.array_equal(out.center, [5.0, 5.0, 5.0])


def test_normalize_bbox_arithmetic():
    out = normalize_cloud(PointCloud([[0, 0, 0], [2, 0, 0], [0, 1, 0]]))
    assert out.scale == 0.5
    assert np.allclose(out.center, (1, 0.5, 0))


def test_normalize_idempotent():
    rng = np.random.default_rng(1)
    once = normalize_cloud(PointCloud(rng.normal(size=(100, 3)) * 3 + 2)).cloud
    twice = normalize_cloud(once).cloud
    assert np.abs(once.positions - twice.positions).max() < 1e-12


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        PointCloud([[np.nan, 0, 0]])
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), np.zeros((3, 3)))
