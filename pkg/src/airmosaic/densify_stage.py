"""Second stage: dense depth for visually-posed frames via a pluggable densifier.

Frames with a substitute (GNSS/heading) pose pass through untouched; only
visually posed frames enter the sliding window. When the window holds the
densifier's required frame count, the center frame is densified and its depth
map lifted to a world-frame point cloud, overwriting any sparse points.
Frames that never become a window center (leading/trailing edges, densifier
failures) are published with their sparse cloud only. Publication order is
strictly by frame id.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .geo import Frame, PointCloud, PoseSource, backproject_pixels

logger = logging.getLogger(__name__)

DEFAULT_STRIDE = 2


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel metric depth aligned with a frame's image; NaN where unknown."""

    width: int
    height: int
    depths: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=np.float64)
        if d.shape != (self.height, self.width):
            raise ValueError(f"depth shape {d.shape} != {(self.height, self.width)}")
        finite = d[~np.isnan(d)]
        if finite.size and (not np.isfinite(finite).all() or (finite <= 0).any()):
            raise ValueError("depths must be positive and finite (or NaN)")
        object.__setattr__(self, "depths", d)


class Densifier(Protocol):
    required_frame_count: int

    def densify(self, frames: Sequence[Frame]) -> DepthMap | None: ...


def depth_to_cloud(frame: Frame, depth: DepthMap, stride: int = DEFAULT_STRIDE) -> PointCloud:
    """Backproject valid depths on the stride lattice; attach pixel colors."""
    if frame.pose is None:
        raise ValueError("depth_to_cloud needs a posed frame")
    cam = frame.camera
    if (depth.width, depth.height) != (cam.width, cam.height):
        raise ValueError("depth map does not match the camera image size")
    vs, us = np.meshgrid(
        np.arange(0, cam.height, stride), np.arange(0, cam.width, stride), indexing="ij"
    )
    us = us.ravel()
    vs = vs.ravel()
    d = depth.depths[vs, us]
    ok = ~np.isnan(d)
    if not ok.any():
        return PointCloud(np.empty((0, 3)), np.empty((0, 3), dtype=np.float32))
    uv = np.stack([us[ok], vs[ok]], axis=1).astype(np.float64)
    points = backproject_pixels(cam, frame.pose, uv, d[ok])
    colors = frame.image[vs[ok], us[ok]].astype(np.float32)
    return PointCloud(points, colors)


class DensifyStage:
    """Sliding-window densification with id-ordered release.

    The window advances one frame at a time with the reference at its center,
    so pass-through frames may become releasable before an earlier visual
    frame was densified; a staging buffer releases frames strictly in order.
    """

    def __init__(self, densifier: Densifier | None, stride: int = DEFAULT_STRIDE):
        self.densifier = densifier
        self.stride = stride
        window = densifier.required_frame_count if densifier else 1
        if window < 1:
            raise ValueError("densifier must require at least one frame")
        self._window: deque[Frame] = deque(maxlen=window)
        self._center = (window - 1) // 2
        self._filled_once = False
        # (id, frame-or-None): None marks a slot not yet finalized
        self._staged: list[list] = []

    # -- staging -------------------------------------------------------------

    def _stage(self, frame: Frame) -> None:
        self._staged.append([frame.id, None])

    def _finalize(self, frame: Frame) -> None:
        for slot in self._staged:
            if slot[0] == frame.id:
                slot[1] = frame
                return
        raise RuntimeError(f"frame {frame.id} finalized without being staged")

    def _release(self) -> list[Frame]:
        out = []
        while self._staged and self._staged[0][1] is not None:
            out.append(self._staged.pop(0)[1])
        return out

    # -- densification ---------------------------------------------------------

    def _densify_center(self) -> None:
        frames = list(self._window)
        reference = frames[self._center]
        depth = None
        if self.densifier is not None:
            try:
                depth = self.densifier.densify(frames)
            except Exception:
                logger.exception("densifier failed on frame %d", reference.id)
                depth = None
        if depth is None:
            self._finalize(reference)  # sparse cloud only, the degraded variant
            return
        cloud = depth_to_cloud(reference, depth, self.stride)
        self._finalize(reference.with_(dense_cloud=cloud, sparse_cloud=None))

    def process(self, frame: Frame) -> list[Frame]:
        self._stage(frame)
        if frame.pose is None or frame.pose.source is not PoseSource.VISUAL or self.densifier is None:
            self._finalize(frame)  # pass-through, bit-identical
            return self._release()

        self._window.append(frame)
        if len(self._window) == self._window.maxlen:
            if not self._filled_once:
                self._filled_once = True
                for leading in list(self._window)[: self._center]:
                    self._finalize(leading)
            self._densify_center()
        return self._release()

    def flush(self) -> list[Frame]:
        for pending in self._staged:
            if pending[1] is None:
                original = next(f for f in self._window if f.id == pending[0])
                pending[1] = original
        self._window.clear()
        return self._release()


class BlockMatchDensifier:
    """Naive multi-view block matching over fronto-parallel depth hypotheses.

    A minimal plane-sweep: each depth plane warps the neighbor views onto the
    reference via backprojection, scores sum-of-absolute-differences over a
    box window, and the best plane wins per pixel. Intended as a stand-in for
    real reconstruction backends on non-synthetic input; quality is not a
    contract.
    """

    def __init__(
        self,
        window_frames: int = 3,
        depth_planes: int = 32,
        patch: int = 5,
        max_cost: float = 0.12,
        depth_margin: float = 1.3,
    ):
        if window_frames < 2:
            raise ValueError("block matching needs at least two views")
        self.required_frame_count = window_frames
        self.depth_planes = depth_planes
        self.patch = patch
        self.max_cost = max_cost
        self.depth_margin = depth_margin

    @staticmethod
    def _gray(img: np.ndarray) -> np.ndarray:
        return img.mean(axis=2).astype(np.float64)

    @staticmethod
    def _box_filter(arr: np.ndarray, size: int) -> np.ndarray:
        pad = size // 2
        padded = np.pad(arr, pad, mode="edge")
        c = np.cumsum(np.cumsum(padded, axis=0), axis=1)
        c = np.pad(c, ((1, 0), (1, 0)))
        h, w = arr.shape
        return (
            c[size : size + h, size : size + w]
            - c[:h, size : size + w]
            - c[size : size + h, :w]
            + c[:h, :w]
        ) / (size * size)

    def _depth_range(self, reference: Frame) -> tuple[float, float]:
        alt = reference.pose.translation.altitude
        if reference.sparse_cloud is not None and len(reference.sparse_cloud) >= 3:
            z = reference.sparse_cloud.points[:, 2]
            lo = max(1.0, alt - float(z.max()))
            hi = max(lo + 1.0, alt - float(z.min()))
            return lo / self.depth_margin, hi * self.depth_margin
        return max(1.0, alt / 4.0), alt * self.depth_margin

    def densify(self, frames: Sequence[Frame]) -> DepthMap | None:
        from .grid import bilinear_image_sample
        from .geo import backproject_pixels, project_points

        reference = frames[len(frames) // 2]
        others = [f for f in frames if f.id != reference.id]
        if not others:
            return None
        cam = reference.camera
        ref_gray = self._gray(reference.image)
        h, w = ref_gray.shape
        vs, us = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        uv = np.stack([us.ravel(), vs.ravel()], axis=1).astype(np.float64)

        lo, hi = self._depth_range(reference)
        depths = np.linspace(lo, hi, self.depth_planes)
        best_cost = np.full((h, w), np.inf)
        best_depth = np.full((h, w), np.nan)
        for d in depths:
            pts = backproject_pixels(cam, reference.pose, uv, np.full(len(uv), d))
            cost = np.zeros((h, w))
            views = 0
            for other in others:
                ouv, _, in_front, in_view = project_points(other.camera, other.pose, pts)
                if not in_view.any():
                    continue
                sampled = bilinear_image_sample(
                    self._gray(other.image), ouv[:, 0], ouv[:, 1]
                ).reshape(h, w)
                diff = np.abs(sampled - ref_gray)
                diff[~in_view.reshape(h, w)] = np.nan
                cost += np.nan_to_num(diff, nan=1.0)
                views += 1
            if views == 0:
                continue
            cost = self._box_filter(cost / views, self.patch)
            better = cost < best_cost
            best_cost[better] = cost[better]
            best_depth[better] = d
        best_depth[best_cost > self.max_cost] = np.nan
        if np.isnan(best_depth).all():
            return None
        return DepthMap(width=w, height=h, depths=best_depth)


_DENSIFIER_FACTORIES: dict[str, object] = {}


def register_densifier(name: str, factory) -> None:
    """factory(options: dict, input_dir) -> Densifier"""
    _DENSIFIER_FACTORIES[name] = factory


def make_densifier(name: str, options: dict | None = None, input_dir=None) -> Densifier | None:
    options = options or {}
    if name == "none":
        return None
    if name == "blockmatch":
        return BlockMatchDensifier(**options)
    if name == "groundtruth" and "groundtruth" not in _DENSIFIER_FACTORIES:
        from . import synth  # registers itself on import

        _ = synth
    if name not in _DENSIFIER_FACTORIES:
        raise KeyError(f"unknown densifier {name!r}")
    return _DENSIFIER_FACTORIES[name](options, input_dir)
