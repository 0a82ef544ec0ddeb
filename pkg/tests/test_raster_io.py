import numpy as np
import pytest

from airmosaic.geo import PointCloud
from airmosaic.grid import LayeredGrid, RegionOfInterest
from airmosaic.raster_io import (
    load_image,
    read_asc,
    save_image,
    write_asc,
    write_color_image,
    write_ply,
    write_world_file,
)


def make_grid(rows=5, cols=7, gsd=0.5):
    g = LayeredGrid(1000.0, 2000.0, gsd, rows, cols, layer_names=("elevation",))
    rng = np.random.default_rng(9)
    data = rng.normal(10.0, 3.0, size=(rows, cols))
    data[0, 0] = np.nan
    g.set_layer("elevation", data)
    return g


def test_asc_round_trip_text_precision(tmp_path):
    g = make_grid()
    path = write_asc(g, "elevation", tmp_path / "e.asc")
    text = path.read_text()
    assert "NODATA_value -9999" in text
    back = read_asc(path)
    assert back.shape == g.shape
    assert back.gsd == pytest.approx(g.gsd)
    orig = g.layer("elevation")
    got = back.layer("elevation")
    # values reproduce the 6-decimal text encoding exactly
    expect = np.array(
        [[float(f"{v:.6f}") if not np.isnan(v) else np.nan for v in row] for row in orig]
    )
    np.testing.assert_array_equal(np.isnan(got), np.isnan(expect))
    np.testing.assert_array_equal(got[~np.isnan(got)], expect[~np.isnan(expect)])


def test_asc_rows_run_north_to_south(tmp_path):
    g = LayeredGrid(0.0, 0.0, 1.0, 2, 2, layer_names=("elevation",))
    g.set_layer("elevation", np.array([[1.0, 2.0], [3.0, 4.0]]))  # row 0 = south
    path = write_asc(g, "elevation", tmp_path / "e.asc")
    body = [l for l in path.read_text().splitlines() if l and l[0] in "-0123456789"]
    assert body[0].split() == ["3.000000", "4.000000"]  # north row first
    assert body[1].split() == ["1.000000", "2.000000"]


def test_world_file_contents(tmp_path):
    g = LayeredGrid(100.0, 200.0, 0.25, 8, 4, layer_names=("elevation",))
    path = write_world_file(g, tmp_path / "m.pgw")
    lines = path.read_text().splitlines()
    assert len(lines) == 6
    assert float(lines[0]) == pytest.approx(0.25)  # pixel size = gsd
    assert float(lines[1]) == 0.0 and float(lines[2]) == 0.0
    assert float(lines[3]) == pytest.approx(-0.25)
    assert float(lines[4]) == pytest.approx(100.0 + 0.125)  # UL pixel center easting
    assert float(lines[5]) == pytest.approx(200.0 + (8 - 0.5) * 0.25)


def test_single_cell_snapshot(tmp_path):
    g = LayeredGrid(0.0, 0.0, 2.0, 1, 1, layer_names=("color_r", "color_g", "color_b"))
    for name in ("color_r", "color_g", "color_b"):
        g.layer(name)[:] = 0.5
    img_path, world_path = write_color_image(g, tmp_path / "m.png")
    img = load_image(img_path)
    assert img.shape == (1, 1, 3)
    assert len(world_path.read_text().splitlines()) == 6


def test_color_image_north_up(tmp_path):
    g = LayeredGrid(0.0, 0.0, 1.0, 2, 1, layer_names=("color_r", "color_g", "color_b"))
    g.layer("color_r")[:] = np.array([[0.0], [1.0]])  # north row bright
    g.layer("color_g")[:] = 0.0
    g.layer("color_b")[:] = 0.0
    img_path, _ = write_color_image(g, tmp_path / "m.png")
    img = load_image(img_path)
    assert img[0, 0, 0] > img[1, 0, 0]  # image row 0 is the northern cell


def test_image_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    img = rng.uniform(0, 1, size=(16, 12, 3)).astype(np.float32)
    path = save_image(img, tmp_path / "x.png")
    back = load_image(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6


def test_grayscale_input_replicates_channels(tmp_path):
    from PIL import Image

    arr = (np.arange(64).reshape(8, 8) * 3 % 256).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(tmp_path / "g.png")
    img = load_image(tmp_path / "g.png")
    assert img.shape == (8, 8, 3)
    np.testing.assert_array_equal(img[:, :, 0], img[:, :, 2])


def test_ply_export(tmp_path):
    cloud = PointCloud(
        points=np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]),
        colors=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=np.float32),
    )
    path = write_ply(cloud, tmp_path / "c.ply")
    lines = path.read_text().splitlines()
    assert lines[0] == "ply"
    assert "element vertex 2" in lines[2]
    assert lines[-1].split()[:3] == ["4.0000", "5.0000", "6.0000"]
    assert lines[-1].split()[3:] == ["0", "255", "0"]
