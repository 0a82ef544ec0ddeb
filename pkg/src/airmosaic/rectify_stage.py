"""Fourth stage: grid-based backward-projection orthorectification.

The frame's surface is resampled to the output ground sampling distance
(spatial and texture resolution stay independent parameters), each valid cell
center is lifted to 3D using its elevation and projected back into the image,
and in-view cells receive bilinearly sampled color plus the observation
angle. Cells behind the camera or outside the image are marked invalid. No
occlusion handling: a cell may sample color through an occluder, a known
artifact of plain backward projection.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geo import Frame, Pose, project_points
from .grid import LayeredGrid, bilinear_image_sample, resample

logger = logging.getLogger(__name__)

# Output gsd never drops below a quarter of the surface gsd: texture detail is
# limited by the raw image, not by upsampling the elevation grid indefinitely.
MIN_GSD_RATIO = 0.25


class RectifyError(ValueError):
    pass


def observation_angle(pose: Pose, cell_point: np.ndarray) -> float:
    """Angle in degrees between the cell-to-camera ray and the local vertical;
    zero is a perfectly nadir observation."""
    ray = pose.center - np.asarray(cell_point, dtype=np.float64)
    norm = float(np.linalg.norm(ray))
    if norm == 0.0:
        return 0.0
    return math.degrees(math.acos(np.clip(ray[2] / norm, -1.0, 1.0)))


def default_target_gsd(frame: Frame) -> float:
    """Native pixel footprint on the ground: footprint width / image width."""
    if frame.footprint is not None:
        return frame.footprint.width / frame.camera.width
    altitude = frame.pose.translation.altitude if frame.pose else frame.geotag.altitude
    return frame.camera.footprint_width(max(altitude, 1.0)) / frame.camera.width


def rectify(frame: Frame, target_gsd: float | None = None) -> LayeredGrid:
    """Produce the rectified per-frame grid: color, observation angle, valid."""
    if frame.pose is None or frame.surface is None:
        raise RectifyError("rectification needs a posed frame with a surface")
    surface = frame.surface
    if target_gsd is None:
        target_gsd = default_target_gsd(frame)
    target_gsd = max(target_gsd, surface.gsd * MIN_GSD_RATIO)

    grid = resample(surface, target_gsd, methods={"valid": "nearest"})
    rows, cols = grid.shape
    elevation = grid.layer("elevation")
    valid = np.nan_to_num(grid.layer("valid"), nan=0.0) >= 0.5
    valid &= ~np.isnan(elevation)

    eastings, northings = grid.center_coords()
    ee, nn = np.meshgrid(eastings, northings)  # (rows, cols), row-major south-first
    pts = np.stack(
        [ee[valid], nn[valid], np.nan_to_num(elevation, nan=0.0)[valid]], axis=1
    )

    color = [grid.add_layer(name) for name in ("color_r", "color_g", "color_b")]
    angle_layer = grid.add_layer("observation_angle")

    if len(pts):
        uv, _, in_front, in_view = project_points(frame.camera, frame.pose, pts)
        usable = in_front & in_view

        rgb = bilinear_image_sample(
            frame.image.astype(np.float64), uv[usable, 0], uv[usable, 1]
        )
        rays = frame.pose.center[None, :] - pts[usable]
        norms = np.linalg.norm(rays, axis=1)
        angles = np.degrees(np.arccos(np.clip(rays[:, 2] / np.maximum(norms, 1e-12), -1.0, 1.0)))

        flat_valid = np.flatnonzero(valid.ravel())
        keep = flat_valid[usable]
        for c in range(3):
            color[c].ravel()[keep] = rgb[:, c]
        angle_layer.ravel()[keep] = angles

        new_valid = np.zeros(rows * cols)
        new_valid[flat_valid[usable]] = 1.0
        invalidated = np.zeros(rows * cols, dtype=bool)
        invalidated[flat_valid[~usable]] = True
        vlayer = grid.layer("valid").ravel()
        vlayer[invalidated] = 0.0
        grid.layer("elevation").ravel()[invalidated] = np.nan
    else:
        grid.layer("valid")[:] = 0.0

    return grid


@dataclass
class RectifyStage:
    target_gsd: float | None = None

    def process(self, frame: Frame) -> list[Frame]:
        try:
            rectified = rectify(frame, self.target_gsd)
        except RectifyError:
            logger.warning("frame %d could not be rectified, dropped", frame.id)
            return []
        if self.target_gsd is None:
            # lock the output gsd on the first frame so updates share a lattice
            self.target_gsd = rectified.gsd
        return [frame.with_(surface=rectified)]

    def flush(self) -> list[Frame]:
        return []
