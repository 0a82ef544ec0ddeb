"""First pipeline stage: georeferenced poses from a pluggable visual provider.

Tracked frames queue until the visual-to-UTM similarity is solvable with
acceptable residuals; afterwards every tracked frame is transformed and
keyframe-gated. Lost frames fall back to the heading-derived substitute pose
when the camera is gimbal stabilized. The georeference is frozen once
accepted: the pipeline is feed-forward and republishing would retroactively
invalidate downstream results.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np

from .geo import (
    Frame,
    Pose,
    PoseSource,
    PointCloud,
    UtmCoord,
    default_pose,
    wgs84_to_utm,
)

logger = logging.getLogger(__name__)


class DegenerateGeometryError(ValueError):
    """Reference points cannot pin the similarity (collinear or no spread)."""


class TrackStatus(Enum):
    TRACKING = "tracking"
    LOST = "lost"
    INITIALIZING = "initializing"


@dataclass(frozen=True)
class TrackResult:
    status: TrackStatus
    local_pose: np.ndarray | None = None  # 3x4 [R | t] in the visual frame
    sparse_points: np.ndarray | None = None  # (N, 3) visual-frame points


class PoseProvider(Protocol):
    def track(self, frame: Frame) -> TrackResult: ...


@dataclass(frozen=True)
class GeoreferenceTransform:
    """Similarity from the visual frame into UTM: u = scale * R @ v + t.

    The rotation is constrained to yaw about the vertical; GNSS provides no
    attitude and the nadir assumption pins roll and pitch. Zone/hemisphere
    identify which UTM frame the transform lands in.
    """

    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    zone: int = 32
    hemisphere: str = "north"

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        r = np.asarray(self.rotation, dtype=np.float64)
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3)
        )

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        return self.scale * (pts @ self.rotation.T) + self.translation


@dataclass
class StagePoseConfig:
    min_reference_frames: int = 20
    max_reference_rmse: float = 1.0
    # None selects 0.2 x ground footprint width at the frame's altitude.
    keyframe_min_translation: float | None = None
    fallback_enabled: bool = True

    def __post_init__(self):
        if self.min_reference_frames < 3:
            raise ValueError("similarity estimation needs at least 3 reference frames")


def _rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def estimate_georeference(
    visual_positions: np.ndarray,
    utm_positions: np.ndarray,
    zone: int = 32,
    hemisphere: str = "north",
) -> tuple[GeoreferenceTransform, float]:
    """Least-squares similarity (scale, yaw, 3D translation) between tracks.

    Minimizes sum ||s*R*v_i + t - u_i||^2 with R restricted to yaw about the
    vertical. Closed form: center both tracks, take the optimal yaw from the
    horizontal cross-covariance, then scale and translation follow.
    """
    v = np.asarray(visual_positions, dtype=np.float64).reshape(-1, 3)
    u = np.asarray(utm_positions, dtype=np.float64).reshape(-1, 3)
    if len(v) != len(u):
        raise ValueError("visual/utm lists differ in length")
    if len(v) < 3:
        raise DegenerateGeometryError("need at least 3 reference positions")

    v_mean = v.mean(axis=0)
    u_mean = u.mean(axis=0)
    vc = v - v_mean
    uc = u - u_mean

    for centered in (vc, uc):
        sv = np.linalg.svd(centered[:, :2], compute_uv=False)
        if sv[0] < 1e-9 or sv[1] < 1e-6 * max(sv[0], 1.0):
            raise DegenerateGeometryError(
                "horizontally collinear reference positions cannot pin the yaw"
            )

    c_term = float(np.sum(uc[:, 0] * vc[:, 0] + uc[:, 1] * vc[:, 1]))
    s_term = float(np.sum(uc[:, 1] * vc[:, 0] - uc[:, 0] * vc[:, 1]))
    z_term = float(np.sum(uc[:, 2] * vc[:, 2]))
    theta = math.atan2(s_term, c_term)
    gain = math.hypot(c_term, s_term) + z_term
    denom = float(np.sum(vc * vc))
    if denom <= 0 or gain <= 0:
        raise DegenerateGeometryError("visual positions have no usable spread")

    scale = gain / denom
    rotation = _rot_z(theta)
    translation = u_mean - scale * rotation @ v_mean
    transform = GeoreferenceTransform(scale, rotation, translation, zone, hemisphere)
    residual = transform.apply_points(v) - u
    rmse = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
    return transform, rmse


def apply_georeference(transform: GeoreferenceTransform, local_pose: np.ndarray) -> Pose:
    """Map a visual-frame 3x4 pose into a UTM pose with source=Visual."""
    local = np.asarray(local_pose, dtype=np.float64)
    if local.shape != (3, 4):
        raise ValueError("local pose must be 3x4")
    rotation = transform.rotation @ local[:, :3]
    t = transform.scale * transform.rotation @ local[:, 3] + transform.translation
    translation = UtmCoord(t[0], t[1], transform.zone, transform.hemisphere, t[2])
    return Pose(rotation, translation, PoseSource.VISUAL)


def select_keyframe(frame: Frame, last_keyframe: Frame | None, min_translation: float) -> bool:
    """Translation-gated keyframe rule; the boundary is inclusive."""
    if last_keyframe is None:
        return True
    if frame.pose is None or last_keyframe.pose is None:
        raise ValueError("keyframe selection needs posed frames")
    dist = float(np.linalg.norm(frame.pose.center - last_keyframe.pose.center))
    return dist >= min_translation


class PoseStage:
    """Stateful frame processor for the pose stage. Single-worker only."""

    def __init__(self, provider: PoseProvider | None, config: StagePoseConfig | None = None):
        self.provider = provider
        self.config = config or StagePoseConfig()
        self.zone: int | None = None
        self.hemisphere: str = "north"
        self.georeference: GeoreferenceTransform | None = None
        self.georeference_rmse: float | None = None
        self._queue: list[tuple[Frame, np.ndarray, np.ndarray | None]] = []
        self._last_keyframe: Frame | None = None
        self.dropped = 0

    # -- helpers -----------------------------------------------------------

    def _utm(self, frame: Frame) -> UtmCoord:
        if self.zone is None:
            first = wgs84_to_utm(frame.geotag)
            self.zone = first.zone
            self.hemisphere = first.hemisphere
            return first
        u = wgs84_to_utm(frame.geotag, forced_zone=self.zone)
        return u

    def _keyframe_threshold(self, frame: Frame) -> float:
        if self.config.keyframe_min_translation is not None:
            return self.config.keyframe_min_translation
        altitude = frame.pose.translation.altitude if frame.pose else frame.geotag.altitude
        return 0.2 * frame.camera.footprint_width(max(altitude, 1.0))

    def _publish_visual(
        self, frame: Frame, local_pose: np.ndarray, sparse: np.ndarray | None
    ) -> Frame:
        pose = apply_georeference(self.georeference, local_pose)
        cloud = None
        if sparse is not None and len(sparse):
            cloud = PointCloud(self.georeference.apply_points(sparse))
        return frame.with_(pose=pose, sparse_cloud=cloud)

    def _fallback(self, frame: Frame) -> Frame:
        utm = self._utm(frame)
        return frame.with_(pose=default_pose(utm, frame.heading))

    # -- stage interface -----------------------------------------------------

    def process(self, frame: Frame) -> list[Frame]:
        utm = self._utm(frame)
        result = (
            self.provider.track(frame)
            if self.provider is not None
            else TrackResult(TrackStatus.LOST)
        )

        if result.status is TrackStatus.TRACKING:
            if self.georeference is None:
                self._queue.append((frame, result.local_pose, result.sparse_points))
                self._try_georeference()
                if self.georeference is not None:
                    return self._drain_queue()
                return []
            published = self._publish_visual(frame, result.local_pose, result.sparse_points)
            if select_keyframe(published, self._last_keyframe, self._keyframe_threshold(published)):
                self._last_keyframe = published
                return [published]
            self.dropped += 1
            return []

        if result.status is TrackStatus.LOST:
            if self.config.fallback_enabled and frame.gimbal_stabilized:
                return [self._fallback(frame)]
            self.dropped += 1
            logger.debug("frame %d lost with fallback disabled, dropped", frame.id)
            return []

        return []  # INITIALIZING: held, nothing published

    def _try_georeference(self) -> None:
        if len(self._queue) < self.config.min_reference_frames:
            return
        visual = np.array([lp[:, 3] for _, lp, _ in self._queue])
        utm = np.array([self._utm(f).vector() for f, _, _ in self._queue])
        try:
            transform, rmse = estimate_georeference(visual, utm, self.zone, self.hemisphere)
        except DegenerateGeometryError:
            return  # keep queueing until the trajectory bends
        if rmse > self.config.max_reference_rmse:
            return
        self.georeference = transform
        self.georeference_rmse = rmse
        logger.info(
            "georeference accepted: scale %.6f rmse %.3f m over %d frames",
            transform.scale,
            rmse,
            len(self._queue),
        )

    def _drain_queue(self) -> list[Frame]:
        out = []
        for frame, local_pose, sparse in sorted(self._queue, key=lambda q: q[0].id):
            out.append(self._publish_visual(frame, local_pose, sparse))
        self._queue.clear()
        if out:
            self._last_keyframe = out[-1]
        return out

    def flush(self) -> list[Frame]:
        """Input exhausted. Frames still queued for georeferencing fall back
        to the substitute pose when permitted, otherwise they are dropped."""
        out = []
        for frame, _, _ in sorted(self._queue, key=lambda q: q[0].id):
            if self.config.fallback_enabled and frame.gimbal_stabilized:
                out.append(self._fallback(frame))
            else:
                self.dropped += 1
        self._queue.clear()
        return out


_PROVIDER_FACTORIES: dict[str, object] = {}


def register_pose_provider(name: str, factory) -> None:
    """factory(options: dict, input_dir) -> PoseProvider"""
    _PROVIDER_FACTORIES[name] = factory


def make_pose_provider(name: str, options: dict | None = None, input_dir=None) -> PoseProvider | None:
    if name == "none":
        return None
    if name == "synthetic" and "synthetic" not in _PROVIDER_FACTORIES:
        from . import synth  # registers itself on import

        _ = synth
    if name not in _PROVIDER_FACTORIES:
        raise KeyError(f"unknown pose provider {name!r}")
    return _PROVIDER_FACTORIES[name](options or {}, input_dir)
