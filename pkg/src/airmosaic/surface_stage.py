"""Third stage: per-frame digital surface models.

Three inbound frame variants are handled: no point cloud (substitute pose
only) produces the flat placeholder surface, a sparse cloud produces a coarse
interpolated surface, and a dense cloud produces the full elevated surface.
The elevated path structures the cloud in a 2-d tree, derives the grid
resolution from nearest-neighbor spacing of a 1% sample, and fills each cell
by inverse-distance weighting of neighbors found around the cell center.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geo import Frame, PointCloud, pixel_ray_directions
from .grid import LayeredGrid, RegionOfInterest
from .kdtree import KdTree2

logger = logging.getLogger(__name__)

# Neighbor search parameters for the per-cell interpolation: without a radius
# bound a fixed-k search would hallucinate heights far away from any data.
RADIUS_FACTOR = 2.0
MAX_NEIGHBORS = 8

PLANAR_GSD = 1.0  # placeholder; the rectifier resizes the grid anyway


class SurfaceError(ValueError):
    pass


def build_planar_dsm(footprint: RegionOfInterest) -> LayeredGrid:
    """Flat zero-elevation surface over the footprint, everything valid."""
    grid = LayeredGrid.create(footprint, PLANAR_GSD, ("elevation", "valid"))
    grid.layer("elevation")[:] = 0.0
    grid.layer("valid")[:] = 1.0
    return grid


def estimate_gsd(points: np.ndarray, tree: KdTree2 | None = None, sample_fraction: float = 0.01) -> float:
    """Mean nearest-neighbor distance over a deterministic 1% sample.

    The sample takes every floor(N / sample_count)-th point so runs are
    reproducible regardless of cloud ordering upstream.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < 2:
        raise SurfaceError("need at least two points to estimate a gsd")
    if tree is None:
        tree = KdTree2(pts)
    sample_count = max(1, math.ceil(sample_fraction * n))
    step = max(1, n // sample_count)
    indices = list(range(0, n, step))[:sample_count]
    total = 0.0
    for i in indices:
        _, dist = tree.nearest(pts[i, :2], exclude=i)
        total += dist
    mean = total / len(indices)
    if not math.isfinite(mean) or mean < 1e-12:
        raise SurfaceError("degenerate cloud: sampled points are coincident")
    return mean


def interpolate_height(neighbors) -> float:
    """Inverse-distance-weighted mean of neighbor heights.

    neighbors: iterable of ((x, y, z), distance). A distance below 1e-12
    is an exact hit and returns that height directly.
    """
    num = 0.0
    den = 0.0
    for point, dist in neighbors:
        z = point[2]
        if dist < 1e-12:
            return float(z)
        w = 1.0 / dist
        num += w * z
        den += w
    if den == 0.0:
        raise SurfaceError("interpolate_height needs at least one neighbor")
    return num / den


def build_elevated_dsm(
    footprint: RegionOfInterest,
    cloud: PointCloud | np.ndarray,
    gsd: float | None = None,
) -> LayeredGrid:
    """Interpolated elevation surface from a point cloud.

    Grid resolution defaults to the estimated nearest-point distance; cells
    with no cloud neighbors within RADIUS_FACTOR * gsd stay invalid.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if len(pts) < 2:
        raise SurfaceError("elevated surface needs a non-trivial cloud")
    tree = KdTree2(pts)
    if gsd is None:
        gsd = estimate_gsd(pts, tree)

    grid = LayeredGrid.create(footprint, gsd, ("elevation", "valid"))
    grid.layer("elevation")[:] = 0.0
    grid.layer("valid")[:] = 0.0
    elev = grid.layer("elevation")
    valid = grid.layer("valid")
    radius = RADIUS_FACTOR * gsd

    eastings, northings = grid.center_coords()
    z = pts[:, 2]
    for i in range(grid.rows):
        n = northings[i]
        for j in range(grid.cols):
            idx, dist = tree.radius((eastings[j], n), radius, cap=MAX_NEIGHBORS)
            if len(idx) == 0:
                continue
            if dist[0] < 1e-12:
                elev[i, j] = z[idx[0]]
            else:
                w = 1.0 / dist
                elev[i, j] = float(np.dot(w, z[idx]) / w.sum())
            valid[i, j] = 1.0
    elev[valid == 0.0] = np.nan
    return grid


def frame_footprint(frame: Frame, z_ref: float = 0.0) -> RegionOfInterest:
    """Bounding box of the image corners projected onto the plane z = z_ref."""
    if frame.pose is None:
        raise SurfaceError("footprint needs a posed frame")
    cam = frame.camera
    corners = np.array(
        [
            [0.0, 0.0],
            [cam.width - 1.0, 0.0],
            [0.0, cam.height - 1.0],
            [cam.width - 1.0, cam.height - 1.0],
        ]
    )
    dirs = pixel_ray_directions(cam, frame.pose, corners)
    origin = frame.pose.center
    dz = dirs[:, 2]
    if np.any(dz >= -1e-12):
        raise SurfaceError("corner rays do not descend; camera not facing the ground")
    depth = (z_ref - origin[2]) / dz
    if np.any(depth <= 0):
        raise SurfaceError("reference plane behind the camera")
    hits = origin[None, :] + depth[:, None] * dirs
    return RegionOfInterest(
        float(hits[:, 0].min()),
        float(hits[:, 1].min()),
        float(hits[:, 0].max()),
        float(hits[:, 1].max()),
    )


@dataclass
class SurfaceStage:
    """Triage between the surface variants; force_planar serves the 2D modes."""

    force_planar: bool = False
    gsd_history: list = None

    def __post_init__(self):
        if self.gsd_history is None:
            self.gsd_history = []

    def process(self, frame: Frame) -> list[Frame]:
        if frame.pose is None:
            logger.warning("frame %d reached surface stage unposed, dropped", frame.id)
            return []
        cloud = None
        if not self.force_planar:
            if frame.dense_cloud is not None and len(frame.dense_cloud) >= 2:
                cloud = frame.dense_cloud
            elif frame.sparse_cloud is not None and len(frame.sparse_cloud) >= 2:
                cloud = frame.sparse_cloud

        if cloud is None:
            footprint = frame_footprint(frame, z_ref=0.0)
            surface = build_planar_dsm(footprint)
        else:
            z_ref = float(np.median(cloud.points[:, 2]))
            footprint = frame_footprint(frame, z_ref=z_ref)
            surface = build_elevated_dsm(footprint, cloud)
        self.gsd_history.append(surface.gsd)
        return [frame.with_(surface=surface, footprint=footprint)]

    def flush(self) -> list[Frame]:
        return []
