"""Geodetic conversions, pinhole camera geometry, and the frame type shared by all stages.

Conventions used throughout the pipeline:

* World frame is UTM east / north / altitude-up. Altitudes are relative to the
  takeoff reference and pass through unmodified (no geoid model).
* Poses store the camera-to-world transform. The camera looks along its
  negative z axis, so a nadir camera with zero heading has the identity
  rotation and still sees the ground. Projection inverts the pose internally.
* Depth is the camera-frame z distance (positive in front of the camera),
  i.e. the altitude drop for yaw-only poses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

if TYPE_CHECKING:
    from .grid import LayeredGrid, RegionOfInterest

# WGS84 ellipsoid
_A = 6378137.0
_F = 1.0 / 298.257223563
_E = math.sqrt(_F * (2.0 - _F))
_K0 = 0.9996
_FALSE_EASTING = 500000.0
_FALSE_NORTHING_SOUTH = 10000000.0

# Krueger series in the third flattening n, to sixth order (forward alpha,
# inverse beta). Good to nanometers; the spec-level requirement is 1e-6 deg.
_N = _F / (2.0 - _F)
_N2, _N3, _N4, _N5, _N6 = _N**2, _N**3, _N**4, _N**5, _N**6

_RECT_RADIUS = _A / (1.0 + _N) * (1.0 + _N2 / 4.0 + _N4 / 64.0 + _N6 / 256.0)

_ALPHA = (
    _N / 2.0 - 2.0 / 3.0 * _N2 + 5.0 / 16.0 * _N3 + 41.0 / 180.0 * _N4
    - 127.0 / 288.0 * _N5 + 7891.0 / 37800.0 * _N6,
    13.0 / 48.0 * _N2 - 3.0 / 5.0 * _N3 + 557.0 / 1440.0 * _N4
    + 281.0 / 630.0 * _N5 - 1983433.0 / 1935360.0 * _N6,
    61.0 / 240.0 * _N3 - 103.0 / 140.0 * _N4 + 15061.0 / 26880.0 * _N5
    + 167603.0 / 181440.0 * _N6,
    49561.0 / 161280.0 * _N4 - 179.0 / 168.0 * _N5 + 6601661.0 / 7257600.0 * _N6,
    34729.0 / 80640.0 * _N5 - 3418889.0 / 1995840.0 * _N6,
    212378941.0 / 319334400.0 * _N6,
)

_BETA = (
    _N / 2.0 - 2.0 / 3.0 * _N2 + 37.0 / 96.0 * _N3 - 1.0 / 360.0 * _N4
    - 81.0 / 512.0 * _N5 + 96199.0 / 604800.0 * _N6,
    1.0 / 48.0 * _N2 + 1.0 / 15.0 * _N3 - 437.0 / 1440.0 * _N4
    + 46.0 / 105.0 * _N5 - 1118711.0 / 3870720.0 * _N6,
    17.0 / 480.0 * _N3 - 37.0 / 840.0 * _N4 - 209.0 / 4480.0 * _N5
    + 5569.0 / 90720.0 * _N6,
    4397.0 / 161280.0 * _N4 - 11.0 / 504.0 * _N5 - 830251.0 / 7257600.0 * _N6,
    4583.0 / 161280.0 * _N5 - 108847.0 / 3991680.0 * _N6,
    20648693.0 / 638668800.0 * _N6,
)


class BehindCameraError(ValueError):
    """World point has non-positive depth in the camera frame."""


class PoseSource(Enum):
    VISUAL = "visual"
    GNSS_DEFAULT = "gnss_default"


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 position; altitude in meters above the takeoff reference."""

    latitude: float
    longitude: float
    altitude: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.latitude) and math.isfinite(self.longitude)):
            raise ValueError("non-finite geographic coordinates")
        if abs(self.latitude) > 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if abs(self.longitude) > 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")


@dataclass(frozen=True)
class UtmCoord:
    """UTM position. Easting/northing in meters, altitude above takeoff reference."""

    easting: float
    northing: float
    zone: int
    hemisphere: str = "north"
    altitude: float = 0.0

    def __post_init__(self):
        if not (1 <= self.zone <= 60):
            raise ValueError(f"UTM zone out of range: {self.zone}")
        if self.hemisphere not in ("north", "south"):
            raise ValueError(f"bad hemisphere flag: {self.hemisphere!r}")
        if not (100000.0 <= self.easting <= 900000.0):
            raise ValueError(f"easting outside UTM validity: {self.easting}")

    def vector(self) -> np.ndarray:
        """(easting, northing, altitude) as float64."""
        return np.array([self.easting, self.northing, self.altitude], dtype=np.float64)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics. Pixel centers sit on integer coordinates."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    def footprint_width(self, altitude: float) -> float:
        """Ground width seen by a nadir camera at the given altitude."""
        return self.width * altitude / self.fx

    def footprint_height(self, altitude: float) -> float:
        return self.height * altitude / self.fy

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Pose:
    """Camera-to-world transform: 3x3 rotation plus UTM camera center."""

    rotation: np.ndarray
    translation: UtmCoord
    source: PoseSource = PoseSource.VISUAL

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1")
        r = r.copy()
        r.setflags(write=False)
        object.__setattr__(self, "rotation", r)

    @property
    def center(self) -> np.ndarray:
        return self.translation.vector()

    def matrix(self) -> np.ndarray:
        """3x4 camera-to-world matrix [R | t]."""
        return np.hstack([self.rotation, self.center.reshape(3, 1)])


@dataclass(frozen=True)
class PointCloud:
    """World-frame points with optional per-point RGB in [0, 1]."""

    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.float32).reshape(-1, 3)
            if len(col) != len(pts):
                raise ValueError("colors/points length mismatch")
            object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Frame:
    """Unit of pipeline flow. Stages publish enriched copies, never mutate."""

    id: int
    timestamp: float
    image: np.ndarray
    geotag: GeoPoint
    heading: float
    camera: CameraModel
    gimbal_stabilized: bool = True
    pose: Pose | None = None
    sparse_cloud: PointCloud | None = None
    dense_cloud: PointCloud | None = None
    surface: "LayeredGrid | None" = None
    footprint: "RegionOfInterest | None" = None

    def with_(self, **changes) -> "Frame":
        return replace(self, **changes)


class Projection(NamedTuple):
    u: float
    v: float
    depth: float
    in_view: bool


def utm_zone_of(longitude: float) -> int:
    """Standard 6-degree zone: floor((lon + 180) / 6) + 1, clamped at 60."""
    return min(int((longitude + 180.0) // 6.0) + 1, 60)


def _central_meridian(zone: int) -> float:
    return zone * 6.0 - 183.0


def wgs84_to_utm(p: GeoPoint, forced_zone: int | None = None) -> UtmCoord:
    """Forward transverse-Mercator projection (Krueger series).

    With forced_zone the point is projected into that zone's meridian even if
    it lies outside the zone's nominal band; the pipeline uses this to keep a
    whole run in the zone locked by its first frame.
    """
    if abs(p.latitude) > 84.0:
        raise ValueError("UTM undefined beyond 84 degrees latitude")
    zone = forced_zone if forced_zone is not None else utm_zone_of(p.longitude)
    if not (1 <= zone <= 60):
        raise ValueError(f"bad UTM zone: {zone}")

    phi = math.radians(p.latitude)
    lam = math.radians(p.longitude - _central_meridian(zone))

    sphi = math.sin(phi)
    tau = math.tan(phi)
    sigma = math.sinh(_E * math.atanh(_E * sphi))
    taup = tau * math.sqrt(1.0 + sigma**2) - sigma * math.sqrt(1.0 + tau**2)

    xi_p = math.atan2(taup, math.cos(lam))
    eta_p = math.asinh(math.sin(lam) / math.hypot(taup, math.cos(lam)))

    xi = xi_p
    eta = eta_p
    for j, a in enumerate(_ALPHA, start=1):
        xi += a * math.sin(2 * j * xi_p) * math.cosh(2 * j * eta_p)
        eta += a * math.cos(2 * j * xi_p) * math.sinh(2 * j * eta_p)

    easting = _FALSE_EASTING + _K0 * _RECT_RADIUS * eta
    northing = _K0 * _RECT_RADIUS * xi
    hemisphere = "north" if p.latitude >= 0.0 else "south"
    if hemisphere == "south":
        northing += _FALSE_NORTHING_SOUTH
    return UtmCoord(easting, northing, zone, hemisphere, p.altitude)


def utm_to_wgs84(u: UtmCoord) -> GeoPoint:
    """Inverse projection. Series for the rectifying step, Newton for the
    conformal-to-geodetic latitude (machine precision, no extra constants)."""
    northing = u.northing
    if u.hemisphere == "south":
        northing -= _FALSE_NORTHING_SOUTH
    xi = northing / (_K0 * _RECT_RADIUS)
    eta = (u.easting - _FALSE_EASTING) / (_K0 * _RECT_RADIUS)

    xi_p = xi
    eta_p = eta
    for j, b in enumerate(_BETA, start=1):
        xi_p -= b * math.sin(2 * j * xi) * math.cosh(2 * j * eta)
        eta_p -= b * math.cos(2 * j * xi) * math.sinh(2 * j * eta)

    taup = math.sin(xi_p) / math.hypot(math.sinh(eta_p), math.cos(xi_p))
    lam = math.atan2(math.sinh(eta_p), math.cos(xi_p))

    # Newton iteration on tau: invert taup = tau*sqrt(1+sigma^2) - sigma*sqrt(1+tau^2)
    tau = taup
    e2 = _E * _E
    for _ in range(8):
        sigma = math.sinh(_E * math.atanh(_E * tau / math.sqrt(1.0 + tau**2)))
        f_tau = tau * math.sqrt(1.0 + sigma**2) - sigma * math.sqrt(1.0 + tau**2)
        d_tau = (
            (taup - f_tau)
            * (1.0 + (1.0 - e2) * tau**2)
            / ((1.0 - e2) * math.sqrt((1.0 + f_tau**2) * (1.0 + tau**2)))
        )
        tau += d_tau
        if abs(d_tau) < 1e-16 * max(1.0, abs(tau)):
            break

    lat = math.degrees(math.atan(tau))
    lon = math.degrees(lam) + _central_meridian(u.zone)
    return GeoPoint(lat, lon, u.altitude)


def heading_rotation(heading_deg: float) -> np.ndarray:
    """Rotation of the substitute pose: Rz(-heading) with compass heading."""
    phi = math.radians(heading_deg % 360.0)
    c, s = math.cos(-phi), math.sin(-phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def default_pose(geotag: UtmCoord, heading: float) -> Pose:
    """Substitute pose from GNSS position and heading, nadir-stabilized camera."""
    return Pose(heading_rotation(heading), geotag, PoseSource.GNSS_DEFAULT)


def project(camera: CameraModel, pose: Pose, world_point: np.ndarray) -> Projection:
    """Project a world point into the image; depth is the camera-frame z distance.

    Raises BehindCameraError for non-positive depth. Out-of-view is a flag,
    not an error: the rectifier marks such cells invalid.
    """
    x_cam = pose.rotation.T @ (np.asarray(world_point, dtype=np.float64) - pose.center)
    depth = -x_cam[2]
    if depth <= 0.0:
        raise BehindCameraError(f"point behind camera (depth {depth:.6g})")
    u = camera.cx + camera.fx * x_cam[0] / depth
    v = camera.cy + camera.fy * x_cam[1] / depth
    in_view = 0.0 <= u <= camera.width - 1 and 0.0 <= v <= camera.height - 1
    return Projection(u, v, depth, in_view)


def backproject(camera: CameraModel, pose: Pose, pixel: tuple[float, float], depth: float) -> np.ndarray:
    """Inverse of project: pixel plus depth to a world-frame point."""
    if depth <= 0.0:
        raise ValueError(f"depth must be positive, got {depth}")
    u, v = pixel
    x_cam = np.array(
        [
            depth * (u - camera.cx) / camera.fx,
            depth * (v - camera.cy) / camera.fy,
            -depth,
        ]
    )
    return pose.rotation @ x_cam + pose.center


def project_points(
    camera: CameraModel, pose: Pose, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) world points.

    Returns (uv, depth, in_front, in_view); uv is only meaningful where
    in_front holds. Never raises.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x_cam = (pts - pose.center) @ pose.rotation
    depth = -x_cam[:, 2]
    in_front = depth > 0.0
    safe = np.where(in_front, depth, 1.0)
    uv = np.empty((len(pts), 2))
    uv[:, 0] = camera.cx + camera.fx * x_cam[:, 0] / safe
    uv[:, 1] = camera.cy + camera.fy * x_cam[:, 1] / safe
    in_view = (
        in_front
        & (uv[:, 0] >= 0.0)
        & (uv[:, 0] <= camera.width - 1)
        & (uv[:, 1] >= 0.0)
        & (uv[:, 1] <= camera.height - 1)
    )
    return uv, depth, in_front, in_view


def backproject_pixels(
    camera: CameraModel, pose: Pose, uv: np.ndarray, depths: np.ndarray
) -> np.ndarray:
    """Vectorized backprojection of (N, 2) pixels with (N,) depths."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    x_cam = np.empty((len(d), 3))
    x_cam[:, 0] = d * (uv[:, 0] - camera.cx) / camera.fx
    x_cam[:, 1] = d * (uv[:, 1] - camera.cy) / camera.fy
    x_cam[:, 2] = -d
    return x_cam @ pose.rotation.T + pose.center


def pixel_ray_directions(camera: CameraModel, pose: Pose, uv: np.ndarray) -> np.ndarray:
    """World-frame ray directions scaled so one unit equals one meter of depth."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    d_cam = np.empty((len(uv), 3))
    d_cam[:, 0] = (uv[:, 0] - camera.cx) / camera.fx
    d_cam[:, 1] = (uv[:, 1] - camera.cy) / camera.fy
    d_cam[:, 2] = -1.0
    return d_cam @ pose.rotation.T
