"""Final stage: fuse rectified frame grids into the global map.

Disjoint update cells are written directly with a single observation.
Overlapping cells run the streaming blend: the candidate mean is

    x_new = n/(n+1) * x_global + 1/(n+1) * x_update

and the candidate sample variance

    s2_new = (n-1)/n * s2_global + (x_update - x_global)^2 / (n+1)

using the pre-update mean. Applied sequentially these reproduce the batch
mean and Bessel-corrected sample variance exactly. A candidate variance above
the threshold spawns a second elevation hypothesis for the cell; afterwards
updates blend into whichever track has the nearer mean, and the track with
the lower running sample variance is kept as primary (ties keep the
incumbent). The hypothesis mean lives in 'elevation_hypothesis'; its count,
variance, color and angle need shadow layers so the variance comparison is
executable and the visible color always belongs to the primary track.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geo import Frame
from .grid import LayeredGrid, extract_overlap, grow, resample, write_region

logger = logging.getLogger(__name__)

# Per-track fields, in blend order. Primary layers carry the map's visible
# names; the hypothesis track shadows them.
_FIELDS = ("elevation", "variance", "observations", "color_r", "color_g", "color_b", "angle")
PRIMARY_LAYERS = {
    "elevation": "elevation",
    "variance": "elevation_variance",
    "observations": "num_observations",
    "color_r": "color_r",
    "color_g": "color_g",
    "color_b": "color_b",
    "angle": "observation_angle",
}
HYPOTHESIS_LAYERS = {
    "elevation": "elevation_hypothesis",
    "variance": "hypothesis_variance",
    "observations": "hypothesis_observations",
    "color_r": "hypothesis_color_r",
    "color_g": "hypothesis_color_g",
    "color_b": "hypothesis_color_b",
    "angle": "hypothesis_angle",
}
UPDATE_LAYERS = ("elevation", "color_r", "color_g", "color_b", "observation_angle")
NEAREST_LAYERS = {"valid": "nearest", "num_observations": "nearest"}


@dataclass
class BlendConfig:
    variance_threshold: float = 1.0  # m^2; the threshold value is a free parameter
    angle_tiebreak: bool = True

    def __post_init__(self):
        if self.variance_threshold <= 0:
            raise ValueError("variance threshold must be positive")


def blend_mean(x_global, n, x_update):
    """Floating average of the elevation after one more observation."""
    return (n / (n + 1.0)) * x_global + (1.0 / (n + 1.0)) * x_update


def blend_variance(s2_global, n, x_global, x_update):
    """Floating sample variance after one more observation (pre-update mean)."""
    return ((n - 1.0) / n) * s2_global + (x_update - x_global) ** 2 / (n + 1.0)


@dataclass(frozen=True)
class CellState:
    """Elevation bookkeeping of one cell; hypothesis fields NaN when absent."""

    elevation: float
    variance: float
    observations: float
    hyp_elevation: float = np.nan
    hyp_variance: float = np.nan
    hyp_observations: float = np.nan

    @property
    def has_hypothesis(self) -> bool:
        return not np.isnan(self.hyp_elevation)


def _paint(track: dict, idx: np.ndarray, update: dict, angle_tiebreak: bool) -> None:
    """Write the update's color/angle into a track at idx, optionally keeping
    the more nadir of the existing and the new observation."""
    if angle_tiebreak:
        old = track["angle"][idx]
        keep = np.isnan(old) | (update["angle"][idx] <= old)
        idx = idx[keep]
    for key in ("color_r", "color_g", "color_b", "angle"):
        track[key][idx] = update[key][idx]


def _blend_cells(primary: dict, hypothesis: dict, update: dict, cfg: BlendConfig) -> None:
    """Vectorized update protocol over flat cell arrays, mutated in place."""
    x = update["elevation"]
    has_hyp = ~np.isnan(hypothesis["elevation"])

    solo = np.flatnonzero(~has_hyp)
    if len(solo):
        cand_var = blend_variance(
            primary["variance"][solo], primary["observations"][solo],
            primary["elevation"][solo], x[solo],
        )
        cand_mean = blend_mean(primary["elevation"][solo], primary["observations"][solo], x[solo])
        accept = cand_var <= cfg.variance_threshold
        acc = solo[accept]
        primary["elevation"][acc] = cand_mean[accept]
        primary["variance"][acc] = cand_var[accept]
        primary["observations"][acc] += 1.0
        _paint(primary, acc, update, cfg.angle_tiebreak)

        # First exceedance: the update opens the hypothesis, primary kept as is.
        spawn = solo[~accept]
        hypothesis["elevation"][spawn] = x[spawn]
        hypothesis["variance"][spawn] = 0.0
        hypothesis["observations"][spawn] = 1.0
        _paint(hypothesis, spawn, update, angle_tiebreak=False)

    contested = np.flatnonzero(has_hyp)
    if len(contested):
        to_primary = np.abs(x[contested] - primary["elevation"][contested]) <= np.abs(
            x[contested] - hypothesis["elevation"][contested]
        )
        for track, idx in ((primary, contested[to_primary]), (hypothesis, contested[~to_primary])):
            track["variance"][idx] = blend_variance(
                track["variance"][idx], track["observations"][idx], track["elevation"][idx], x[idx]
            )
            track["elevation"][idx] = blend_mean(
                track["elevation"][idx], track["observations"][idx], x[idx]
            )
            track["observations"][idx] += 1.0
            _paint(track, idx, update, cfg.angle_tiebreak)

        swap = contested[
            hypothesis["variance"][contested] < primary["variance"][contested]
        ]  # ties keep the incumbent primary
        for key in _FIELDS:
            a, b = primary[key], hypothesis[key]
            a[swap], b[swap] = b[swap].copy(), a[swap].copy()


def resolve_hypothesis(cell_state: CellState, x_update: float, cfg: BlendConfig) -> CellState:
    """Single-cell view of the update protocol, backed by the array path."""
    def one(v):
        return np.array([v], dtype=np.float64)

    primary = {
        "elevation": one(cell_state.elevation),
        "variance": one(cell_state.variance),
        "observations": one(cell_state.observations),
        "color_r": one(np.nan), "color_g": one(np.nan), "color_b": one(np.nan),
        "angle": one(np.nan),
    }
    hypothesis = {
        "elevation": one(cell_state.hyp_elevation),
        "variance": one(cell_state.hyp_variance),
        "observations": one(cell_state.hyp_observations),
        "color_r": one(np.nan), "color_g": one(np.nan), "color_b": one(np.nan),
        "angle": one(np.nan),
    }
    update = {
        "elevation": one(x_update),
        "color_r": one(np.nan), "color_g": one(np.nan), "color_b": one(np.nan),
        "angle": one(np.nan),
    }
    _blend_cells(primary, hypothesis, update, cfg)
    return CellState(
        float(primary["elevation"][0]),
        float(primary["variance"][0]),
        float(primary["observations"][0]),
        float(hypothesis["elevation"][0]),
        float(hypothesis["variance"][0]),
        float(hypothesis["observations"][0]),
    )


def _require_update_layers(update: LayeredGrid) -> None:
    needed = ("valid",) + UPDATE_LAYERS
    missing = [n for n in needed if n not in update.layers]
    if missing:
        raise ValueError(f"update grid lacks rectified layers: {missing}")


def _all_layer_names() -> tuple[str, ...]:
    return tuple(PRIMARY_LAYERS.values()) + tuple(HYPOTHESIS_LAYERS.values()) + ("valid",)


def _initialize_global(update: LayeredGrid) -> LayeredGrid:
    g = LayeredGrid(
        update.origin_easting, update.origin_northing, update.gsd,
        update.rows, update.cols, layer_names=_all_layer_names(),
    )
    valid = update.valid_mask() & ~np.isnan(update.layer("elevation"))
    for name in UPDATE_LAYERS:
        g.layer(name)[valid] = update.layer(name)[valid]
    g.layer("num_observations")[valid] = 1.0
    g.layer("elevation_variance")[valid] = 0.0
    g.layer("valid")[valid] = 1.0
    return g


def _direct_write_grid(disjoint: LayeredGrid) -> LayeredGrid:
    out = LayeredGrid(
        disjoint.origin_easting, disjoint.origin_northing, disjoint.gsd,
        disjoint.rows, disjoint.cols, layer_names=_all_layer_names(),
    )
    if disjoint.is_empty():
        return out
    mask = np.nan_to_num(disjoint.layer("valid"), nan=0.0) >= 0.5
    mask &= ~np.isnan(disjoint.layer("elevation"))
    if not mask.any():
        return out
    for name in UPDATE_LAYERS:
        out.layer(name)[mask] = disjoint.layer(name)[mask]
    out.layer("num_observations")[mask] = 1.0
    out.layer("elevation_variance")[mask] = 0.0
    out.layer("valid")[mask] = 1.0
    return out


def fuse_update(
    global_map: LayeredGrid | None, update: LayeredGrid, cfg: BlendConfig
) -> LayeredGrid:
    """Fuse one rectified update into the global map and return it.

    The first update initializes the map and locks its gsd; later updates are
    resampled to that gsd if they disagree, the map is grown to cover them,
    disjoint regions written directly and overlaps blended per cell.
    """
    _require_update_layers(update)
    if global_map is None:
        return _initialize_global(update)

    if abs(update.gsd - global_map.gsd) > 1e-9 * global_map.gsd:
        update = resample(update, global_map.gsd, methods=NEAREST_LAYERS)

    global_map = grow(global_map, update.extent)
    sub_global, sub_update, disjoint = extract_overlap(global_map, update)

    write_region(global_map, _direct_write_grid(disjoint))

    if not sub_global.is_empty():
        mask = sub_global.valid_mask() & sub_update.valid_mask()
        mask &= ~np.isnan(sub_update.layer("elevation"))
        if mask.any():
            primary = {f: sub_global.layer(PRIMARY_LAYERS[f])[mask] for f in _FIELDS}
            hypothesis = {f: sub_global.layer(HYPOTHESIS_LAYERS[f])[mask] for f in _FIELDS}
            upd = {
                "elevation": sub_update.layer("elevation")[mask],
                "color_r": sub_update.layer("color_r")[mask],
                "color_g": sub_update.layer("color_g")[mask],
                "color_b": sub_update.layer("color_b")[mask],
                "angle": sub_update.layer("observation_angle")[mask],
            }
            _blend_cells(primary, hypothesis, upd, cfg)

            blended = LayeredGrid(
                sub_global.origin_easting, sub_global.origin_northing, sub_global.gsd,
                sub_global.rows, sub_global.cols, layer_names=_all_layer_names(),
            )
            for f in _FIELDS:
                blended.layer(PRIMARY_LAYERS[f])[mask] = primary[f]
                blended.layer(HYPOTHESIS_LAYERS[f])[mask] = hypothesis[f]
            blended.layer("valid")[mask] = 1.0
            write_region(global_map, blended)

    return global_map


class MosaicStage:
    """Owns the global map; snapshots are deep copies so exporters never see
    a half-fused update."""

    def __init__(
        self,
        cfg: BlendConfig | None = None,
        snapshot_every: int = 0,
        on_snapshot: Callable[[LayeredGrid, int], None] | None = None,
        collect_clouds: bool = False,
    ):
        self.cfg = cfg or BlendConfig()
        self.snapshot_every = snapshot_every
        self.on_snapshot = on_snapshot
        self.global_map: LayeredGrid | None = None
        self.fused = 0
        self.collect_clouds = collect_clouds
        self.clouds = []

    def process(self, frame: Frame) -> list[Frame]:
        if frame.surface is None:
            logger.warning("frame %d reached mosaic without a surface, dropped", frame.id)
            return []
        if self.collect_clouds and frame.dense_cloud is not None:
            self.clouds.append(frame.dense_cloud)
        self.global_map = fuse_update(self.global_map, frame.surface, self.cfg)
        self.fused += 1
        if (
            self.on_snapshot is not None
            and self.snapshot_every > 0
            and self.fused % self.snapshot_every == 0
        ):
            self.on_snapshot(self.snapshot(), self.fused)
        return []

    def snapshot(self) -> LayeredGrid | None:
        return self.global_map.copy() if self.global_map is not None else None

    def flush(self) -> list[Frame]:
        return []
