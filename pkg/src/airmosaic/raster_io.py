"""File exporters and importers for grids: ESRI ASCII, world files, images, PLY.

The .asc writer emits "NODATA_value -9999" and rows north to south with six
decimal places; the reader restores exactly what the text encodes, so an
export/import round trip is bit-exact modulo that text precision.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .geo import PointCloud
from .grid import LayeredGrid

ASC_NODATA = -9999.0


def write_asc(grid: LayeredGrid, layer: str, path: str | Path) -> Path:
    """Write one layer as an ESRI ASCII grid."""
    path = Path(path)
    data = grid.layer(layer)
    out = np.where(np.isnan(data), ASC_NODATA, data)
    lines = [
        f"ncols {grid.cols}",
        f"nrows {grid.rows}",
        f"xllcorner {grid.origin_easting:.6f}",
        f"yllcorner {grid.origin_northing:.6f}",
        f"cellsize {grid.gsd:.6f}",
        f"NODATA_value {ASC_NODATA:.0f}",
    ]
    for row in out[::-1]:  # internal row 0 is south; file runs north to south
        lines.append(" ".join(f"{v:.6f}" for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_asc(path: str | Path) -> LayeredGrid:
    """Read an ESRI ASCII grid into a single-layer grid named 'elevation'."""
    text = Path(path).read_text().split("\n")
    header: dict[str, float] = {}
    row_lines = []
    for line in text:
        line = line.strip()
        if not line:
            continue
        key = line.split()[0].lower()
        if key in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"):
            header[key] = float(line.split()[1])
        else:
            row_lines.append(line)
    cols = int(header["ncols"])
    rows = int(header["nrows"])
    nodata = header.get("nodata_value", ASC_NODATA)
    data = np.array([[float(v) for v in line.split()] for line in row_lines])
    if data.shape != (rows, cols):
        raise ValueError(f"asc body shape {data.shape} != header {(rows, cols)}")
    data = data[::-1].copy()
    data[data == nodata] = np.nan
    return LayeredGrid(
        header["xllcorner"],
        header["yllcorner"],
        header["cellsize"],
        rows,
        cols,
        layers={"elevation": data},
    )


def write_world_file(grid: LayeredGrid, path: str | Path) -> Path:
    """Six-line world file for a north-up image export of the grid."""
    path = Path(path)
    top_center_n = grid.origin_northing + (grid.rows - 0.5) * grid.gsd
    left_center_e = grid.origin_easting + 0.5 * grid.gsd
    lines = [
        f"{grid.gsd:.6f}",
        "0.000000",
        "0.000000",
        f"{-grid.gsd:.6f}",
        f"{left_center_e:.6f}",
        f"{top_center_n:.6f}",
    ]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_color_image(
    grid: LayeredGrid,
    path: str | Path,
    layers: tuple[str, str, str] = ("color_r", "color_g", "color_b"),
    bit_depth: int = 8,
) -> tuple[Path, Path]:
    """Write the RGB color layers as a north-up raster plus world file.

    Invalid cells come out black. Returns (image_path, world_file_path).
    """
    if bit_depth not in (8, 16):
        raise ValueError("bit depth must be 8 or 16")
    path = Path(path)
    chans = []
    for name in layers:
        data = np.nan_to_num(grid.layer(name), nan=0.0)
        chans.append(np.clip(data, 0.0, 1.0))
    rgb = np.stack(chans, axis=-1)[::-1]  # north-up
    if bit_depth == 8:
        img = Image.fromarray((rgb * 255.0 + 0.5).astype(np.uint8), mode="RGB")
        img.save(path)
    else:
        # PNG supports 16-bit only per channel grayscale via PIL; pack RGB as
        # three 16-bit grayscale files would be unwieldy, so store 16-bit as
        # a raw .npy sidecar next to an 8-bit preview.
        arr16 = (rgb * 65535.0 + 0.5).astype(np.uint16)
        np.save(path.with_suffix(".npy"), arr16)
        img = Image.fromarray((rgb * 255.0 + 0.5).astype(np.uint8), mode="RGB")
        img.save(path)
    world = write_world_file(grid, path.with_suffix(".pgw"))
    return path, world


def write_gray_image(grid: LayeredGrid, layer: str, path: str | Path) -> tuple[Path, Path]:
    """Normalized 8-bit grayscale render of one layer, for quick inspection."""
    path = Path(path)
    data = grid.layer(layer)
    finite = data[~np.isnan(data)]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    span = (hi - lo) if hi > lo else 1.0
    gray = np.nan_to_num((data - lo) / span, nan=0.0)
    img = Image.fromarray((gray[::-1] * 255.0 + 0.5).astype(np.uint8), mode="L")
    img.save(path)
    world = write_world_file(grid, path.with_suffix(".pgw"))
    return path, world


def write_ply(cloud: PointCloud, path: str | Path) -> Path:
    """ASCII PLY with xyz and uchar RGB."""
    path = Path(path)
    n = len(cloud)
    colors = cloud.colors
    if colors is None:
        colors = np.full((n, 3), 0.5, dtype=np.float32)
    rgb8 = np.clip(colors * 255.0 + 0.5, 0, 255).astype(np.uint8)
    with path.open("w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {n}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for p, c in zip(cloud.points, rgb8):
            fh.write(f"{p[0]:.4f} {p[1]:.4f} {p[2]:.4f} {c[0]} {c[1]} {c[2]}\n")
    return path


def load_image(path: str | Path) -> np.ndarray:
    """Image file to (H, W, 3) float32 in [0, 1]; grayscale inputs are
    replicated to three channels."""
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.shape[2] == 4:
        arr = arr[:, :, :3]
    if arr.dtype == np.uint8:
        return (arr.astype(np.float32)) / 255.0
    if arr.dtype == np.uint16:
        return (arr.astype(np.float32)) / 65535.0
    return arr.astype(np.float32)


def save_image(image: np.ndarray, path: str | Path) -> Path:
    """(H, W, 3) float [0, 1] to an 8-bit image file."""
    path = Path(path)
    arr = (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)
    return path
