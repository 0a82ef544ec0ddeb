"""UTM-anchored, dynamically growable multi-layer rasters.

A grid is a stack of same-shaped float64 layers over a square-cell lattice.
Cell (i, j) covers the half-open UTM rectangle starting at
(origin_e + j*gsd, origin_n + i*gsd); row 0 is the southernmost row.
Origins are always snapped to integer multiples of the gsd in absolute UTM,
so any two grids with equal gsd share one lattice and overlap extraction is
exact, never resampled. No-data is NaN; boolean-ish layers ('valid') store
0.0/1.0 and NaN where nothing was ever written.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NODATA = math.nan

# Growth happens in chunks of whole cells beyond the requested extent so a
# slowly expanding mosaic does not reallocate every frame.
GROWTH_CHUNK = 32

# Alignment tolerance as a fraction of the gsd.
_ALIGN_TOL = 1e-6


class LatticeAlignmentError(ValueError):
    """Two grids do not share a cell lattice."""


@dataclass(frozen=True)
class RegionOfInterest:
    min_easting: float
    min_northing: float
    max_easting: float
    max_northing: float

    def __post_init__(self):
        vals = (self.min_easting, self.min_northing, self.max_easting, self.max_northing)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("non-finite region of interest")
        if self.max_easting <= self.min_easting or self.max_northing <= self.min_northing:
            raise ValueError(f"degenerate region of interest: {self}")

    @property
    def width(self) -> float:
        return self.max_easting - self.min_easting

    @property
    def height(self) -> float:
        return self.max_northing - self.min_northing

    def union(self, other: "RegionOfInterest") -> "RegionOfInterest":
        return RegionOfInterest(
            min(self.min_easting, other.min_easting),
            min(self.min_northing, other.min_northing),
            max(self.max_easting, other.max_easting),
            max(self.max_northing, other.max_northing),
        )

    def intersection(self, other: "RegionOfInterest") -> "RegionOfInterest | None":
        min_e = max(self.min_easting, other.min_easting)
        min_n = max(self.min_northing, other.min_northing)
        max_e = min(self.max_easting, other.max_easting)
        max_n = min(self.max_northing, other.max_northing)
        if max_e <= min_e or max_n <= min_n:
            return None
        return RegionOfInterest(min_e, min_n, max_e, max_n)

    def contains(self, other: "RegionOfInterest", tol: float = 1e-9) -> bool:
        return (
            self.min_easting <= other.min_easting + tol
            and self.min_northing <= other.min_northing + tol
            and self.max_easting >= other.max_easting - tol
            and self.max_northing >= other.max_northing - tol
        )


class LayeredGrid:
    """Mutable, single-owner raster stack. Transfer between stages, never share."""

    def __init__(
        self,
        origin_easting: float,
        origin_northing: float,
        gsd: float,
        rows: int,
        cols: int,
        layers: dict[str, np.ndarray] | None = None,
        layer_names: tuple[str, ...] | list[str] = (),
    ):
        if not (math.isfinite(gsd) and gsd > 0):
            raise ValueError(f"gsd must be positive and finite, got {gsd}")
        self.origin_easting = float(origin_easting)
        self.origin_northing = float(origin_northing)
        self.gsd = float(gsd)
        self.rows = int(rows)
        self.cols = int(cols)
        self.layers: dict[str, np.ndarray] = {}
        if layers is not None:
            for name, data in layers.items():
                arr = np.asarray(data, dtype=np.float64)
                if arr.shape != (self.rows, self.cols):
                    raise ValueError(f"layer {name!r} shape {arr.shape} != grid shape")
                self.layers[name] = arr
        for name in layer_names:
            if name not in self.layers:
                self.add_layer(name)

    # -- construction ------------------------------------------------------

    @classmethod
    def create(
        cls, roi: RegionOfInterest, gsd: float, layer_names: tuple[str, ...] | list[str]
    ) -> "LayeredGrid":
        """Grid covering the roi; at least one cell per axis, origin snapped
        to the absolute gsd lattice."""
        if not (math.isfinite(gsd) and gsd > 0):
            raise ValueError(f"gsd must be positive and finite, got {gsd}")
        origin_e = math.floor(roi.min_easting / gsd + _ALIGN_TOL) * gsd
        origin_n = math.floor(roi.min_northing / gsd + _ALIGN_TOL) * gsd
        cols = max(1, math.ceil((roi.max_easting - origin_e) / gsd - _ALIGN_TOL))
        rows = max(1, math.ceil((roi.max_northing - origin_n) / gsd - _ALIGN_TOL))
        return cls(origin_e, origin_n, gsd, rows, cols, layer_names=tuple(layer_names))

    def copy(self) -> "LayeredGrid":
        return LayeredGrid(
            self.origin_easting,
            self.origin_northing,
            self.gsd,
            self.rows,
            self.cols,
            layers={k: v.copy() for k, v in self.layers.items()},
        )

    def like_empty(self) -> "LayeredGrid":
        """Same geometry and layer names, all no-data."""
        return LayeredGrid(
            self.origin_easting,
            self.origin_northing,
            self.gsd,
            self.rows,
            self.cols,
            layer_names=tuple(self.layers),
        )

    # -- geometry ----------------------------------------------------------

    @property
    def extent(self) -> RegionOfInterest:
        return RegionOfInterest(
            self.origin_easting,
            self.origin_northing,
            self.origin_easting + self.cols * self.gsd,
            self.origin_northing + self.rows * self.gsd,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def is_empty(self) -> bool:
        return self.rows == 0 or self.cols == 0

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (
            self.origin_easting + (j + 0.5) * self.gsd,
            self.origin_northing + (i + 0.5) * self.gsd,
        )

    def index_of(self, easting: float, northing: float) -> tuple[int, int]:
        j = int(math.floor((easting - self.origin_easting) / self.gsd))
        i = int(math.floor((northing - self.origin_northing) / self.gsd))
        return i, j

    def center_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """(eastings, northings) of cell centers; eastings per column, northings per row."""
        e = self.origin_easting + (np.arange(self.cols) + 0.5) * self.gsd
        n = self.origin_northing + (np.arange(self.rows) + 0.5) * self.gsd
        return e, n

    def aligned_with(self, other: "LayeredGrid") -> bool:
        if abs(self.gsd - other.gsd) > _ALIGN_TOL * self.gsd:
            return False
        for a, b in (
            (self.origin_easting, other.origin_easting),
            (self.origin_northing, other.origin_northing),
        ):
            k = (a - b) / self.gsd
            if abs(k - round(k)) > _ALIGN_TOL:
                return False
        return True

    # -- layer access ------------------------------------------------------

    def layer(self, name: str) -> np.ndarray:
        return self.layers[name]

    def add_layer(self, name: str, fill: float = NODATA) -> np.ndarray:
        arr = np.full((self.rows, self.cols), fill, dtype=np.float64)
        self.layers[name] = arr
        return arr

    def set_layer(self, name: str, data: np.ndarray) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if arr.shape != (self.rows, self.cols):
            raise ValueError(f"layer {name!r} shape {arr.shape} != {(self.rows, self.cols)}")
        self.layers[name] = arr

    def valid_mask(self) -> np.ndarray:
        """True where the grid holds data: the 'valid' layer when present,
        otherwise any non-NaN cell of the first layer."""
        if "valid" in self.layers:
            v = self.layers["valid"]
            return np.nan_to_num(v, nan=0.0) >= 0.5
        if not self.layers:
            return np.zeros((self.rows, self.cols), dtype=bool)
        first = next(iter(self.layers.values()))
        return ~np.isnan(first)

    # -- windowing ---------------------------------------------------------

    def _index_range(self, roi: RegionOfInterest) -> tuple[int, int, int, int]:
        j0 = int(round((roi.min_easting - self.origin_easting) / self.gsd))
        i0 = int(round((roi.min_northing - self.origin_northing) / self.gsd))
        j1 = int(round((roi.max_easting - self.origin_easting) / self.gsd))
        i1 = int(round((roi.max_northing - self.origin_northing) / self.gsd))
        return i0, i1, j0, j1

    def window(self, roi: RegionOfInterest) -> "LayeredGrid":
        """Copy of the cells under a lattice-aligned roi (must lie inside)."""
        i0, i1, j0, j1 = self._index_range(roi)
        if i0 < 0 or j0 < 0 or i1 > self.rows or j1 > self.cols:
            raise ValueError("window outside grid extent")
        return LayeredGrid(
            self.origin_easting + j0 * self.gsd,
            self.origin_northing + i0 * self.gsd,
            self.gsd,
            i1 - i0,
            j1 - j0,
            layers={k: v[i0:i1, j0:j1].copy() for k, v in self.layers.items()},
        )


def create(roi: RegionOfInterest, gsd: float, layer_names) -> LayeredGrid:
    return LayeredGrid.create(roi, gsd, layer_names)


def grow(grid: LayeredGrid, roi: RegionOfInterest) -> LayeredGrid:
    """Extend the grid to cover the union of its extent and the roi.

    The origin stays on the existing lattice, old cell values are preserved
    bit-exactly, and each growing side over-allocates to a GROWTH_CHUNK
    multiple so repeated per-frame growth amortizes.
    """
    ext = grid.extent
    target = ext.union(roi)
    gsd = grid.gsd

    def cells_needed(gap: float) -> int:
        n = math.ceil(gap / gsd - _ALIGN_TOL)
        if n <= 0:
            return 0
        return math.ceil(n / GROWTH_CHUNK) * GROWTH_CHUNK

    west = cells_needed(ext.min_easting - target.min_easting)
    east = cells_needed(target.max_easting - ext.max_easting)
    south = cells_needed(ext.min_northing - target.min_northing)
    north = cells_needed(target.max_northing - ext.max_northing)
    if west == east == south == north == 0:
        return grid

    rows = grid.rows + south + north
    cols = grid.cols + west + east
    layers = {}
    for name, data in grid.layers.items():
        arr = np.full((rows, cols), NODATA, dtype=np.float64)
        arr[south : south + grid.rows, west : west + grid.cols] = data
        layers[name] = arr
    return LayeredGrid(
        grid.origin_easting - west * gsd,
        grid.origin_northing - south * gsd,
        gsd,
        rows,
        cols,
        layers=layers,
    )


def _bilinear_axis(coord: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split continuous cell-center coordinates into (i0, i1, frac) with the
    base index clamped but the fraction free, so edge samples extrapolate
    linearly instead of flattening."""
    if size == 1:
        z = np.zeros_like(coord, dtype=int)
        return z, z, np.zeros_like(coord)
    i0 = np.clip(np.floor(coord).astype(int), 0, size - 2)
    frac = coord - i0
    return i0, i0 + 1, frac


def _resample_bilinear(data: np.ndarray, rows_c: np.ndarray, cols_c: np.ndarray) -> np.ndarray:
    """Sample a layer at continuous (row, col) cell-center coordinates.

    All-valid layers use plain separable linear interpolation (extrapolating
    at the borders, which keeps linear ramps exact). Layers containing NaN
    fall back to validity-weighted averaging of the 2x2 neighborhood.
    """
    i0, i1, fi = _bilinear_axis(rows_c, data.shape[0])
    j0, j1, fj = _bilinear_axis(cols_c, data.shape[1])
    ii0, jj0 = np.meshgrid(i0, j0, indexing="ij")
    ii1, jj1 = np.meshgrid(i1, j1, indexing="ij")
    wfi, wfj = np.meshgrid(fi, fj, indexing="ij")

    q00 = data[ii0, jj0]
    q01 = data[ii0, jj1]
    q10 = data[ii1, jj0]
    q11 = data[ii1, jj1]

    if not np.isnan(data).any():
        top = q00 * (1 - wfj) + q01 * wfj
        bot = q10 * (1 - wfj) + q11 * wfj
        return top * (1 - wfi) + bot * wfi

    wfi = np.clip(wfi, 0.0, 1.0)
    wfj = np.clip(wfj, 0.0, 1.0)
    w00 = (1 - wfi) * (1 - wfj)
    w01 = (1 - wfi) * wfj
    w10 = wfi * (1 - wfj)
    w11 = wfi * wfj
    total = np.zeros_like(w00)
    acc = np.zeros_like(w00)
    for q, w in ((q00, w00), (q01, w01), (q10, w10), (q11, w11)):
        ok = ~np.isnan(q)
        acc[ok] += q[ok] * w[ok]
        total[ok] += w[ok]
    out = np.full_like(acc, NODATA)
    usable = total > 1e-12
    out[usable] = acc[usable] / total[usable]
    return out


def resample(grid: LayeredGrid, new_gsd: float, methods: dict[str, str] | None = None) -> LayeredGrid:
    """Resample every layer to a new gsd over the same UTM extent.

    Continuous layers default to bilinear; pass methods={'name': 'nearest'}
    for validity flags and counters. The output origin snaps to the absolute
    new-gsd lattice (sub-cell growth of the extent) so all grids of one run
    stay mutually aligned, which keeps overlap extraction exact.
    """
    if not (math.isfinite(new_gsd) and new_gsd > 0):
        raise ValueError(f"gsd must be positive and finite, got {new_gsd}")
    methods = methods or {}
    ext = grid.extent
    origin_e = math.floor(ext.min_easting / new_gsd + _ALIGN_TOL) * new_gsd
    origin_n = math.floor(ext.min_northing / new_gsd + _ALIGN_TOL) * new_gsd
    cols = max(1, math.ceil((ext.max_easting - origin_e) / new_gsd - _ALIGN_TOL))
    rows = max(1, math.ceil((ext.max_northing - origin_n) / new_gsd - _ALIGN_TOL))
    out = LayeredGrid(origin_e, origin_n, new_gsd, rows, cols)

    # Continuous cell-center coordinates of the new lattice in old-cell units.
    cols_c = (origin_e - grid.origin_easting + (np.arange(cols) + 0.5) * new_gsd) / grid.gsd - 0.5
    rows_c = (origin_n - grid.origin_northing + (np.arange(rows) + 0.5) * new_gsd) / grid.gsd - 0.5
    jn = np.clip(np.round(cols_c).astype(int), 0, grid.cols - 1)
    in_ = np.clip(np.round(rows_c).astype(int), 0, grid.rows - 1)

    for name, data in grid.layers.items():
        if methods.get(name, "bilinear") == "nearest":
            out.layers[name] = data[np.ix_(in_, jn)].copy()
        else:
            out.layers[name] = _resample_bilinear(data, rows_c, cols_c)
    return out


def extract_overlap(
    global_grid: LayeredGrid, update: LayeredGrid
) -> tuple[LayeredGrid, LayeredGrid, LayeredGrid]:
    """Split an update against the global map.

    Returns (sub_global, sub_update, disjoint_update): equal-shape windows
    over the extent intersection, plus a grid shaped like the update holding
    the update's values wherever the global map has no valid data (outside
    the intersection or over never-written cells). Cells covered by valid
    global data are no-data in the disjoint grid.
    """
    if not global_grid.aligned_with(update):
        raise LatticeAlignmentError("global and update grids are not on one lattice")

    inter = global_grid.extent.intersection(update.extent)
    if inter is None:
        empty = LayeredGrid(
            update.origin_easting, update.origin_northing, update.gsd, 0, 0,
            layer_names=tuple(global_grid.layers),
        )
        empty_u = LayeredGrid(
            update.origin_easting, update.origin_northing, update.gsd, 0, 0,
            layer_names=tuple(update.layers),
        )
        return empty, empty_u, update.copy()

    sub_global = global_grid.window(inter)
    sub_update = update.window(inter)

    disjoint = update.copy()
    i0, i1, j0, j1 = update._index_range(inter)
    covered = np.zeros((update.rows, update.cols), dtype=bool)
    covered[i0:i1, j0:j1] = sub_global.valid_mask()
    for arr in disjoint.layers.values():
        arr[covered] = NODATA
    return sub_global, sub_update, disjoint


def write_region(global_grid: LayeredGrid, region: LayeredGrid) -> LayeredGrid:
    """Overwrite the global grid with the region's non-no-data cells.

    The region must be lattice-aligned and lie inside the global extent
    (grow first). Layers missing in the global grid are added.
    """
    if region.is_empty():
        return global_grid
    if not global_grid.aligned_with(region):
        raise LatticeAlignmentError("region is not on the global lattice")
    if not global_grid.extent.contains(region.extent, tol=_ALIGN_TOL * global_grid.gsd):
        raise ValueError("region outside global extent; grow the global grid first")
    i0, i1, j0, j1 = global_grid._index_range(region.extent)
    for name, data in region.layers.items():
        if name not in global_grid.layers:
            global_grid.add_layer(name)
        mask = ~np.isnan(data)
        target = global_grid.layers[name][i0:i1, j0:j1]
        target[mask] = data[mask]
    return global_grid


def bilinear_image_sample(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear lookup in an (H, W) or (H, W, C) raster at continuous pixel
    coordinates with integer pixel centers; coordinates are clamped to the
    valid support."""
    h, w = image.shape[:2]
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, w - 1.0)
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, h - 1.0)
    j0 = np.clip(np.floor(u).astype(int), 0, max(w - 2, 0))
    i0 = np.clip(np.floor(v).astype(int), 0, max(h - 2, 0))
    j1 = np.minimum(j0 + 1, w - 1)
    i1 = np.minimum(i0 + 1, h - 1)
    fu = u - j0
    fv = v - i0
    if image.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    top = image[i0, j0] * (1 - fu) + image[i0, j1] * fu
    bot = image[i1, j0] * (1 - fu) + image[i1, j1] * fu
    return top * (1 - fv) + bot * fv
