import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airmosaic.geo import (
    BehindCameraError,
    CameraModel,
    GeoPoint,
    Pose,
    PoseSource,
    UtmCoord,
    backproject,
    backproject_pixels,
    default_pose,
    heading_rotation,
    project,
    project_points,
    utm_to_wgs84,
    utm_zone_of,
    wgs84_to_utm,
)

CAM = CameraModel(fx=1000.0, fy=1000.0, cx=320.0, cy=240.0, width=640, height=480)


def nadir_pose(e=500000.0, n=5000000.0, alt=100.0, heading=0.0) -> Pose:
    return default_pose(UtmCoord(e, n, 32, "north", alt), heading)


# -- domain type invariants -------------------------------------------------


def test_geopoint_bounds():
    with pytest.raises(ValueError):
        GeoPoint(91.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, 181.0)


def test_utmcoord_bounds():
    with pytest.raises(ValueError):
        UtmCoord(50000.0, 0.0, 32)
    with pytest.raises(ValueError):
        UtmCoord(500000.0, 0.0, 61)
    with pytest.raises(ValueError):
        UtmCoord(500000.0, 0.0, 32, "middle")


def test_camera_model_bounds():
    with pytest.raises(ValueError):
        CameraModel(0.0, 1.0, 0.0, 0.0, 10, 10)
    with pytest.raises(ValueError):
        CameraModel(1.0, 1.0, 10.0, 0.0, 10, 10)


def test_pose_requires_orthonormal_rotation():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 2.0, UtmCoord(500000.0, 0.0, 32))
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), UtmCoord(500000.0, 0.0, 32))


# -- UTM projection ----------------------------------------------------------


def test_central_meridian_maps_to_false_easting():
    u = wgs84_to_utm(GeoPoint(0.0, 9.0))
    assert u.zone == 32
    assert u.easting == pytest.approx(500000.0, abs=1e-6)
    assert u.northing == pytest.approx(0.0, abs=1e-6)


def test_zone_formula():
    # zone = floor((lon + 180) / 6) + 1
    assert utm_zone_of(10.2) == 32
    assert wgs84_to_utm(GeoPoint(52.0, 10.2)).zone == 32
    assert wgs84_to_utm(GeoPoint(52.0, 10.2)).hemisphere == "north"
    assert utm_zone_of(-180.0) == 1
    assert utm_zone_of(179.999) == 60


def _meridian_arc_quadrature(lat_deg: float) -> float:
    """Independent oracle: meridian arc length by numerical quadrature."""
    a = 6378137.0
    f = 1.0 / 298.257223563
    e2 = f * (2 - f)
    t = np.linspace(0.0, math.radians(lat_deg), 200001)
    integrand = (1.0 - e2 * np.sin(t) ** 2) ** -1.5
    return a * (1.0 - e2) * np.trapezoid(integrand, t)


@pytest.mark.parametrize("lat", [10.0, 45.0, 52.0, 83.9])
def test_northing_on_central_meridian_matches_meridian_arc(lat):
    u = wgs84_to_utm(GeoPoint(lat, 9.0))
    assert u.easting == pytest.approx(500000.0, abs=1e-6)
    assert u.northing == pytest.approx(0.9996 * _meridian_arc_quadrature(lat), abs=1e-3)


def test_southern_hemisphere_false_northing():
    u = wgs84_to_utm(GeoPoint(-30.0, 9.0))
    assert u.hemisphere == "south"
    assert u.northing == pytest.approx(1e7 - 0.9996 * _meridian_arc_quadrature(30.0), abs=1e-3)
    back = utm_to_wgs84(u)
    assert back.latitude == pytest.approx(-30.0, abs=1e-9)


def test_latitude_beyond_84_rejected():
    with pytest.raises(ValueError):
        wgs84_to_utm(GeoPoint(84.5, 0.0))


def test_forced_zone_projection():
    p = GeoPoint(52.0, 10.2)
    u = wgs84_to_utm(p, forced_zone=33)
    assert u.zone == 33
    back = utm_to_wgs84(u)
    assert back.latitude == pytest.approx(52.0, abs=1e-9)
    assert back.longitude == pytest.approx(10.2, abs=1e-9)


def test_utm_round_trip_random_points():
    rng = np.random.default_rng(7)
    lats = rng.uniform(-84.0, 84.0, 10_000)
    lons = rng.uniform(-180.0, 180.0, 10_000)
    worst = 0.0
    for lat, lon in zip(lats, lons):
        u = wgs84_to_utm(GeoPoint(lat, lon))
        p = utm_to_wgs84(u)
        worst = max(worst, abs(p.latitude - lat), abs(p.longitude - lon))
    assert worst < 1e-6


@given(
    lat=st.floats(min_value=-84.0, max_value=84.0),
    lon=st.floats(min_value=-179.999, max_value=179.999),
)
@settings(max_examples=200, deadline=None)
def test_utm_round_trip_property(lat, lon):
    u = wgs84_to_utm(GeoPoint(lat, lon))
    p = utm_to_wgs84(u)
    assert abs(p.latitude - lat) < 1e-6
    assert abs(p.longitude - lon) < 1e-6


# -- default pose (substitute pose from heading) ------------------------------


def test_default_pose_zero_heading_is_identity():
    assert np.allclose(nadir_pose(heading=0.0).rotation, np.eye(3), atol=1e-15)


def test_default_pose_heading_90():
    r = nadir_pose(heading=90.0).rotation
    expected = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(r, expected, atol=1e-15)


def test_default_pose_periodicity():
    assert np.allclose(
        nadir_pose(heading=360.0).rotation, nadir_pose(heading=0.0).rotation, atol=1e-12
    )


@given(heading=st.floats(min_value=-720.0, max_value=720.0, allow_nan=False))
@settings(max_examples=200, deadline=None)
def test_default_pose_rotation_always_orthonormal(heading):
    r = heading_rotation(heading)
    assert np.max(np.abs(r @ r.T - np.eye(3))) < 1e-12
    assert abs(np.linalg.det(r) - 1.0) < 1e-12
    assert np.allclose(r[2], [0.0, 0.0, 1.0])  # bottom row of the stated form


def test_default_pose_source_flag():
    assert nadir_pose().source is PoseSource.GNSS_DEFAULT


# -- projection ---------------------------------------------------------------


def test_project_principal_ray():
    pr = project(CAM, nadir_pose(), np.array([500000.0, 5000000.0, 0.0]))
    assert (pr.u, pr.v) == (CAM.cx, CAM.cy)
    assert pr.depth == pytest.approx(100.0, abs=1e-12)
    assert pr.in_view


def test_project_offset_east():
    # u = cx + fx * X / Z for identity yaw
    pr = project(CAM, nadir_pose(), np.array([500010.0, 5000000.0, 0.0]))
    assert pr.u == pytest.approx(CAM.cx + 100.0, abs=1e-9)
    assert pr.v == pytest.approx(CAM.cy, abs=1e-9)


def test_project_behind_camera():
    with pytest.raises(BehindCameraError):
        project(CAM, nadir_pose(alt=100.0), np.array([500000.0, 5000000.0, 200.0]))


def test_project_out_of_view_flag():
    pr = project(CAM, nadir_pose(), np.array([500100.0, 5000000.0, 0.0]))
    assert not pr.in_view  # u = cx + 1000 px, far outside


def test_backproject_requires_positive_depth():
    with pytest.raises(ValueError):
        backproject(CAM, nadir_pose(), (320.0, 240.0), 0.0)


def test_project_backproject_round_trip_bulk():
    rng = np.random.default_rng(3)
    n = 10_000
    us = rng.uniform(0.0, CAM.width - 1, n)
    vs = rng.uniform(0.0, CAM.height - 1, n)
    ds = rng.uniform(1.0, 500.0, n)
    worst_px = 0.0
    worst_d = 0.0
    for heading in (0.0, 37.0, 211.5):
        pose = nadir_pose(heading=heading)
        pts = backproject_pixels(CAM, pose, np.stack([us, vs], axis=1), ds)
        uv, depth, in_front, _ = project_points(CAM, pose, pts)
        assert in_front.all()
        worst_px = max(worst_px, np.abs(uv[:, 0] - us).max(), np.abs(uv[:, 1] - vs).max())
        worst_d = max(worst_d, np.abs(depth - ds).max())
    assert worst_px < 1e-6
    assert worst_d < 1e-9


def test_scalar_and_vector_projection_agree():
    pose = nadir_pose(heading=123.0)
    pts = np.array([[500004.0, 5000003.0, 2.0], [499998.5, 4999997.0, -1.0]])
    uv, depth, in_front, in_view = project_points(CAM, pose, pts)
    for k in range(len(pts)):
        pr = project(CAM, pose, pts[k])
        assert pr.u == pytest.approx(uv[k, 0], abs=1e-12)
        assert pr.v == pytest.approx(uv[k, 1], abs=1e-12)
        assert pr.depth == pytest.approx(depth[k], abs=1e-12)
        assert pr.in_view == in_view[k]
        assert in_front[k]
