"""Synthetic ground-truth generator and oracle suite.

Renders a textured analytic heightfield from a simulated serpentine flight
and writes a dataset the pipeline can ingest (images plus sidecars) together
with truth files: exact poses, the heightfield raster, and the ortho texture.
Rendering is per-pixel ray casting with bilinear texture lookup and no
lighting, which keeps the rectification and elevation oracles analytically
closed. Everything is deterministic under a fixed seed.

Also hosts the pipeline test doubles built on the same scene: a pose provider
that serves truth poses through an arbitrary similarity-degraded visual frame
(with optional jitter and scripted Lost intervals), and a densifier returning
exact ray-cast depth.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .densify_stage import DepthMap, register_densifier
from .geo import (
    CameraModel,
    Frame,
    GeoPoint,
    Pose,
    PoseSource,
    UtmCoord,
    heading_rotation,
    utm_to_wgs84,
)
from .grid import LayeredGrid, RegionOfInterest
from .pose_stage import TrackResult, TrackStatus, register_pose_provider
from .raster_io import save_image, write_asc, write_world_file

logger = logging.getLogger(__name__)

DEFAULT_CAMERA = CameraModel(fx=200.0, fy=200.0, cx=120.0, cy=90.0, width=240, height=180)
DEFAULT_ANCHOR = (498000.0, 5762000.0, 32, "north")  # roughly 52N in zone 32


# -- deterministic texel hashing ------------------------------------------------


def _hash01(i: np.ndarray, j: np.ndarray, salt: int) -> np.ndarray:
    """Uniform [0, 1) per integer lattice point, stable across runs."""
    with np.errstate(over="ignore"):
        x = i.astype(np.int64).astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        x ^= j.astype(np.int64).astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        x ^= np.uint64((salt * 0x165667B19E3779F9) & 0xFFFFFFFFFFFFFFFF)
        x ^= x >> np.uint64(30)
        x *= np.uint64(0xBF58476D1CE4E5B9)
        x ^= x >> np.uint64(27)
        x *= np.uint64(0x94D049BB133111EB)
        x ^= x >> np.uint64(31)
    return (x >> np.uint64(11)).astype(np.float64) / float(1 << 53)


# -- heightfields ----------------------------------------------------------------


class Heightfield:
    """Analytic elevation function over scene-local coordinates."""

    min_elevation = 0.0
    max_elevation = 0.0
    max_slope = 0.0

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class FlatField(Heightfield):
    def __init__(self, elevation: float = 0.0):
        self.min_elevation = self.max_elevation = float(elevation)

    def __call__(self, x, y):
        return np.full_like(np.asarray(x, dtype=np.float64), self.max_elevation)


class RampField(Heightfield):
    def __init__(self, slope_x: float = 0.05, slope_y: float = 0.0, extent=(100.0, 100.0)):
        self.slope_x = float(slope_x)
        self.slope_y = float(slope_y)
        corners = [
            self.slope_x * ex + self.slope_y * ey
            for ex in (0.0, extent[0])
            for ey in (0.0, extent[1])
        ]
        self.min_elevation = min(corners)
        self.max_elevation = max(corners)
        self.max_slope = math.hypot(self.slope_x, self.slope_y)

    def __call__(self, x, y):
        return self.slope_x * np.asarray(x, dtype=np.float64) + self.slope_y * np.asarray(y)


class RidgeField(Heightfield):
    """Raised-cosine ridge running north-south: smooth crest and feet so the
    ray intersection stays single-rooted for nadir-ish cameras."""

    def __init__(self, amplitude: float = 10.0, center_x: float = 50.0, half_width: float = 20.0):
        self.amplitude = float(amplitude)
        self.center_x = float(center_x)
        self.half_width = float(half_width)
        self.min_elevation = 0.0
        self.max_elevation = self.amplitude
        self.max_slope = self.amplitude * math.pi / (2.0 * self.half_width)

    def __call__(self, x, y):
        u = np.clip(np.abs(np.asarray(x, dtype=np.float64) - self.center_x) / self.half_width, 0.0, 1.0)
        return 0.5 * self.amplitude * (1.0 + np.cos(math.pi * u))


class SmoothRandomField(Heightfield):
    """Low-frequency sinusoid mix drawn from a seed."""

    def __init__(self, amplitude: float = 4.0, seed: int = 0, waves: int = 4):
        rng = np.random.default_rng(seed)
        self.amps = amplitude * rng.uniform(0.4, 1.0, waves) / waves
        self.wavelengths = rng.uniform(30.0, 70.0, waves)
        self.angles = rng.uniform(0.0, math.pi, waves)
        self.phases = rng.uniform(0.0, 2 * math.pi, waves)
        total = float(np.sum(self.amps))
        self.min_elevation = -total
        self.max_elevation = total
        self.max_slope = float(np.sum(self.amps * 2 * math.pi / self.wavelengths))

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out = np.zeros_like(x)
        for a, lam, ang, ph in zip(self.amps, self.wavelengths, self.angles, self.phases):
            k = 2 * math.pi / lam
            out = out + a * np.sin(k * (x * math.cos(ang) + y * math.sin(ang)) + ph)
        return out


def make_heightfield(kind: str, params: dict, extent) -> Heightfield:
    if kind == "flat":
        return FlatField(**params)
    if kind == "ramp":
        return RampField(extent=extent, **params)
    if kind == "ridge":
        defaults = {"center_x": extent[0] / 2.0}
        defaults.update(params)
        return RidgeField(**defaults)
    if kind == "smooth":
        return SmoothRandomField(**params)
    raise ValueError(f"unknown heightfield {kind!r}")


# -- textures ---------------------------------------------------------------------


class Texture:
    """Continuous RGB field built from a texel raster by bilinear lookup."""

    def __init__(self, texel: float):
        self.texel = float(texel)

    def texel_color(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64) / self.texel - 0.5
        y = np.asarray(y, dtype=np.float64) / self.texel - 0.5
        j0 = np.floor(x).astype(np.int64)
        i0 = np.floor(y).astype(np.int64)
        fx = (x - j0)[..., None]
        fy = (y - i0)[..., None]
        c00 = self.texel_color(i0, j0)
        c01 = self.texel_color(i0, j0 + 1)
        c10 = self.texel_color(i0 + 1, j0)
        c11 = self.texel_color(i0 + 1, j0 + 1)
        top = c00 * (1 - fx) + c01 * fx
        bot = c10 * (1 - fx) + c11 * fx
        return top * (1 - fy) + bot * fy


class CheckerTexture(Texture):
    """Checkerboard of two colors with a seeded per-texel brightness jitter;
    the jitter breaks the periodicity so correlation-based alignment checks
    have a unique peak."""

    DARK = np.array([0.20, 0.16, 0.14])
    LIGHT = np.array([0.82, 0.86, 0.90])

    def __init__(self, period: float = 10.0, texel: float = 1.0, seed: int = 0, jitter: float = 0.08):
        super().__init__(texel)
        self.period = float(period)
        self.seed = int(seed)
        self.jitter = float(jitter)
        self.cells_per_square = self.period / self.texel

    def texel_color(self, i, j):
        cx = (j + 0.5) * self.texel
        cy = (i + 0.5) * self.texel
        parity = (np.floor(cx / self.period) + np.floor(cy / self.period)) % 2
        base = np.where(parity[..., None] < 0.5, self.DARK, self.LIGHT)
        noise = (_hash01(i, j, self.seed) - 0.5)[..., None] * 2 * self.jitter
        return np.clip(base + noise, 0.0, 1.0)


class NoiseTexture(Texture):
    def __init__(self, texel: float = 1.0, seed: int = 0):
        super().__init__(texel)
        self.seed = int(seed)

    def texel_color(self, i, j):
        return np.stack([_hash01(i, j, self.seed * 3 + c) for c in range(3)], axis=-1)


def make_texture(kind: str, params: dict) -> Texture:
    if kind == "checker":
        return CheckerTexture(**params)
    if kind == "noise":
        return NoiseTexture(**params)
    raise ValueError(f"unknown texture {kind!r}")


# -- scene spec --------------------------------------------------------------------


@dataclass
class SceneSpec:
    extent: tuple[float, float] = (100.0, 100.0)
    heightfield: str = "flat"
    height_params: dict = field(default_factory=dict)
    texture: str = "checker"
    texture_params: dict = field(default_factory=dict)
    altitude: float = 40.0
    speed: float = 4.0
    line_spacing: float | None = None  # None: 50% side overlap
    frame_rate: float = 2.0
    gnss_sigma: float = 0.0
    heading_sigma: float = 0.0
    seed: int = 0
    camera: CameraModel = DEFAULT_CAMERA
    anchor: tuple = DEFAULT_ANCHOR

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise ValueError("frame rate must be positive")
        if isinstance(self.camera, dict):
            self.camera = CameraModel(**self.camera)
        self.anchor = tuple(self.anchor)
        self.extent = tuple(float(v) for v in self.extent)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "SceneSpec":
        data = yaml.safe_load(Path(path).read_text()) or {}
        return cls(**data)

    def to_dict(self) -> dict:
        cam = self.camera
        return {
            "extent": list(self.extent),
            "heightfield": self.heightfield,
            "height_params": dict(self.height_params),
            "texture": self.texture,
            "texture_params": dict(self.texture_params),
            "altitude": self.altitude,
            "speed": self.speed,
            "line_spacing": self.line_spacing,
            "frame_rate": self.frame_rate,
            "gnss_sigma": self.gnss_sigma,
            "heading_sigma": self.heading_sigma,
            "seed": self.seed,
            "camera": {
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "width": cam.width, "height": cam.height,
            },
            "anchor": list(self.anchor),
        }


@dataclass(frozen=True)
class PlannedFrame:
    index: int
    timestamp: float
    easting: float  # absolute UTM
    northing: float
    altitude: float
    heading: float


class SyntheticScene:
    """Scene geometry, flight plan, renderer, and truth accessors."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.height = make_heightfield(spec.heightfield, spec.height_params, spec.extent)
        self.texture = make_texture(spec.texture, spec.texture_params)
        self.anchor_e, self.anchor_n, self.zone, self.hemisphere = spec.anchor
        if spec.altitude <= self.height.max_elevation:
            raise ValueError("flight altitude must clear the heightfield")
        cam = spec.camera
        tilt = max(
            math.hypot((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy)
            for u in (0.0, cam.width - 1.0)
            for v in (0.0, cam.height - 1.0)
        )
        if self.height.max_slope * tilt >= 0.95:
            raise ValueError(
                "heightfield too steep for the camera field of view; "
                "the ray intersection would not be single-rooted"
            )
        self._plan = self._make_plan()

    # -- coordinates ---------------------------------------------------------

    def local_xy(self, easting, northing):
        return np.asarray(easting) - self.anchor_e, np.asarray(northing) - self.anchor_n

    def elevation_at(self, easting, northing):
        x, y = self.local_xy(easting, northing)
        return self.height(x, y)

    def texture_at(self, easting, northing):
        x, y = self.local_xy(easting, northing)
        return self.texture.sample(x, y)

    # -- flight plan -----------------------------------------------------------

    def _make_plan(self) -> list[PlannedFrame]:
        spec = self.spec
        cam = spec.camera
        fw = cam.footprint_width(spec.altitude)
        fh = cam.footprint_height(spec.altitude)
        spacing = spec.line_spacing if spec.line_spacing is not None else 0.5 * fw
        ex, ey = spec.extent

        x0 = min(fw / 2.0, ex / 2.0)
        xs = [x0]
        while xs[-1] + spacing <= ex - fw / 2.0 + 1e-9:
            xs.append(xs[-1] + spacing)

        y_lo = min(fh / 2.0, ey / 2.0)
        y_hi = max(ey - fh / 2.0, y_lo)
        step = spec.speed / spec.frame_rate
        n_y = max(1, int(math.floor((y_hi - y_lo) / step + 1e-9)) + 1)

        plan: list[PlannedFrame] = []
        k = 0
        for line, x in enumerate(xs):
            northbound = line % 2 == 0
            for m in range(n_y):
                y = y_lo + m * step if northbound else y_hi - m * step
                plan.append(
                    PlannedFrame(
                        index=k,
                        timestamp=k / spec.frame_rate,
                        easting=self.anchor_e + x,
                        northing=self.anchor_n + y,
                        altitude=spec.altitude,
                        heading=0.0 if northbound else 180.0,
                    )
                )
                k += 1
        return plan

    @property
    def plan(self) -> list[PlannedFrame]:
        return self._plan

    def truth_pose(self, planned: PlannedFrame) -> Pose:
        return Pose(
            heading_rotation(planned.heading),
            UtmCoord(planned.easting, planned.northing, self.zone, self.hemisphere, planned.altitude),
            PoseSource.VISUAL,
        )

    # -- rendering ----------------------------------------------------------------

    def _pixel_grid(self, camera: CameraModel) -> np.ndarray:
        vs, us = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
        return np.stack([us.ravel(), vs.ravel()], axis=1).astype(np.float64)

    def ray_depths(self, pose: Pose, camera: CameraModel, uv: np.ndarray) -> np.ndarray:
        """Exact camera-frame depth of the ray/heightfield intersection.

        The intersection function is strictly monotone in depth when
        max_slope * max_tilt < 1 (validated at construction), so plain
        bisection between the highest and lowest possible contact converges
        to the unique root.
        """
        from .geo import pixel_ray_directions

        dirs = pixel_ray_directions(camera, pose, uv)
        origin = pose.center
        dz = dirs[:, 2]
        if np.any(dz >= 0):
            raise ValueError("a pixel ray does not descend; camera must face the ground")

        d_lo = (self.height.max_elevation - origin[2]) / dz
        d_hi = (self.height.min_elevation - origin[2]) / dz
        if np.all(d_hi - d_lo < 1e-12):
            return d_lo

        lo = d_lo.copy()
        hi = d_hi.copy()
        for _ in range(48):
            mid = 0.5 * (lo + hi)
            px = origin[0] + mid * dirs[:, 0] - self.anchor_e
            py = origin[1] + mid * dirs[:, 1] - self.anchor_n
            above = (origin[2] + mid * dz) > self.height(px, py)
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        return 0.5 * (lo + hi)

    def render(self, pose: Pose, camera: CameraModel) -> np.ndarray:
        """Ray-cast image of the textured heightfield, float RGB in [0, 1]."""
        uv = self._pixel_grid(camera)
        from .geo import pixel_ray_directions

        depths = self.ray_depths(pose, camera, uv)
        dirs = pixel_ray_directions(camera, pose, uv)
        hits = pose.center[None, :] + depths[:, None] * dirs
        rgb = self.texture_at(hits[:, 0], hits[:, 1])
        return rgb.reshape(camera.height, camera.width, 3).astype(np.float32)

    def depth_map(self, pose: Pose, camera: CameraModel) -> np.ndarray:
        uv = self._pixel_grid(camera)
        return self.ray_depths(pose, camera, uv).reshape(camera.height, camera.width)

    # -- truth accessors for oracles ------------------------------------------------

    def flown_footprint_mask(self, grid: LayeredGrid) -> np.ndarray:
        """Cells of a grid whose centers fall inside any planned frame's
        ground footprint (corners projected onto the median-elevation plane)."""
        from .surface_stage import frame_footprint

        z_ref = 0.5 * (self.height.min_elevation + self.height.max_elevation)
        mask = np.zeros(grid.shape, dtype=bool)
        e, n = grid.center_coords()
        for planned in self.plan:
            pose = self.truth_pose(planned)
            frame = Frame(
                id=planned.index, timestamp=planned.timestamp,
                image=np.zeros((1, 1, 3), dtype=np.float32),
                geotag=GeoPoint(0.0, 0.0, planned.altitude),
                heading=planned.heading, camera=self.spec.camera, pose=pose,
            )
            fp = frame_footprint(frame, z_ref=z_ref)
            cols = (e >= fp.min_easting) & (e <= fp.max_easting)
            rows = (n >= fp.min_northing) & (n <= fp.max_northing)
            mask |= rows[:, None] & cols[None, :]
        return mask


def compare_elevation(result: LayeredGrid, scene: SyntheticScene) -> dict:
    """RMSE of the result's elevation against the analytic heightfield at
    valid cell centers, plus coverage of the flown footprint."""
    valid = result.valid_mask() & ~np.isnan(result.layer("elevation"))
    e, n = result.center_coords()
    ee, nn = np.meshgrid(e, n)
    truth = scene.elevation_at(ee, nn)
    diff = result.layer("elevation") - truth
    rmse = float(np.sqrt(np.mean(diff[valid] ** 2))) if valid.any() else math.inf
    footprint = scene.flown_footprint_mask(result)
    inside = footprint.sum()
    coverage = float((valid & footprint).sum() / inside) if inside else 0.0
    return {"rmse": rmse, "coverage": coverage}


def estimate_raster_offset(result: np.ndarray, truth: np.ndarray) -> tuple[int, int]:
    """Integer (row, col) shift of `result` against `truth` by phase
    correlation; NaNs are filled with the finite mean."""
    def prep(a):
        a = np.asarray(a, dtype=np.float64)
        m = np.nanmean(a)
        a = np.where(np.isnan(a), m, a) - m
        return a

    a = prep(result)
    b = prep(truth)
    fa = np.fft.fft2(a)
    fb = np.fft.fft2(b)
    cross = fa * np.conj(fb)
    denom = np.abs(cross)
    cross /= np.where(denom > 1e-12, denom, 1.0)
    corr = np.real(np.fft.ifft2(cross))
    peak = np.unravel_index(np.argmax(corr), corr.shape)
    di = peak[0] if peak[0] <= a.shape[0] // 2 else peak[0] - a.shape[0]
    dj = peak[1] if peak[1] <= a.shape[1] // 2 else peak[1] - a.shape[1]
    return int(di), int(dj)


# -- dataset generation ---------------------------------------------------------------


def generate(spec: SceneSpec, out_dir: str | Path) -> Path:
    """Write a full synthetic dataset: frames, sidecars, calibration, truth."""
    out = Path(out_dir)
    frames_dir = out / "frames"
    truth_dir = out / "truth"
    frames_dir.mkdir(parents=True, exist_ok=True)
    truth_dir.mkdir(parents=True, exist_ok=True)

    scene = SyntheticScene(spec)
    cam = spec.camera
    rng = np.random.default_rng(spec.seed)

    (out / "calibration.yaml").write_text(
        yaml.safe_dump(
            {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
             "width": cam.width, "height": cam.height},
            sort_keys=False,
        )
    )

    pose_lines = []
    for planned in scene.plan:
        pose = scene.truth_pose(planned)
        image = scene.render(pose, cam)
        save_image(image, frames_dir / f"{planned.index:06d}.png")

        noisy_e = planned.easting + rng.normal(0.0, spec.gnss_sigma)
        noisy_n = planned.northing + rng.normal(0.0, spec.gnss_sigma)
        noisy_alt = planned.altitude + rng.normal(0.0, spec.gnss_sigma)
        noisy_heading = (planned.heading + rng.normal(0.0, spec.heading_sigma)) % 360.0
        geotag = utm_to_wgs84(
            UtmCoord(noisy_e, noisy_n, scene.zone, scene.hemisphere, noisy_alt)
        )
        sidecar = {
            "lat": float(geotag.latitude),
            "lon": float(geotag.longitude),
            "alt": float(noisy_alt),
            "heading": float(noisy_heading),
            "timestamp": float(planned.timestamp),
            "gimbal": True,
        }
        (frames_dir / f"{planned.index:06d}.yaml").write_text(
            yaml.safe_dump(sidecar, sort_keys=False)
        )

        m = pose.matrix()
        pose_lines.append(
            str(planned.index) + " " + " ".join(f"{v:.9f}" for v in m.reshape(-1))
        )

    (truth_dir / "poses.txt").write_text("\n".join(pose_lines) + "\n")
    (truth_dir / "scene.yaml").write_text(yaml.safe_dump(spec.to_dict(), sort_keys=False))

    # truth heightfield raster over the scene extent
    hf_gsd = 0.5
    hf = LayeredGrid.create(
        RegionOfInterest(
            scene.anchor_e, scene.anchor_n,
            scene.anchor_e + spec.extent[0], scene.anchor_n + spec.extent[1],
        ),
        hf_gsd,
        ("elevation",),
    )
    e, n = hf.center_coords()
    ee, nn = np.meshgrid(e, n)
    hf.set_layer("elevation", scene.elevation_at(ee, nn))
    write_asc(hf, "elevation", truth_dir / "heightfield.asc")

    # truth ortho texture raster at texel resolution
    texel = scene.texture.texel
    ortho = LayeredGrid.create(hf.extent, texel, ())
    oe, on = ortho.center_coords()
    oee, onn = np.meshgrid(oe, on)
    rgb = scene.texture_at(oee, onn)
    save_image(rgb[::-1].astype(np.float32), truth_dir / "ortho.png")
    write_world_file(ortho, truth_dir / "ortho.pgw")

    logger.info("generated %d frames into %s", len(scene.plan), out)
    return out


def load_scene(dataset_dir: str | Path) -> SyntheticScene:
    spec = SceneSpec.from_yaml(Path(dataset_dir) / "truth" / "scene.yaml")
    return SyntheticScene(spec)


def load_truth_poses(dataset_dir: str | Path) -> dict[int, np.ndarray]:
    """id -> 3x4 truth pose matrix, as written by generate()."""
    poses = {}
    for line in (Path(dataset_dir) / "truth" / "poses.txt").read_text().splitlines():
        parts = line.split()
        if len(parts) != 13:
            continue
        poses[int(parts[0])] = np.array([float(v) for v in parts[1:]]).reshape(3, 4)
    return poses


# -- pipeline test doubles --------------------------------------------------------------


class SyntheticPoseProvider:
    """Serves truth poses mapped into a degraded visual frame.

    The visual frame differs from UTM by an unknown similarity (scale,
    yaw, offset) so the georeferencer has real work to do. The offset is
    given relative to the first camera position: like a real visual SLAM
    frame, the degraded frame's origin lies near the flight, not at the UTM
    origin thousands of kilometers away. Optional jitter perturbs the visual
    translations; scripted Lost intervals exercise the substitute-pose
    fallback.
    """

    def __init__(
        self,
        truth_poses: dict[int, np.ndarray],
        scale: float = 1.0,
        yaw_deg: float = 0.0,
        offset: Sequence[float] = (0.0, 0.0, 0.0),
        jitter_sigma: float = 0.0,
        lost_ranges: Sequence[Sequence[int]] = (),
        sparse_count: int = 0,
        scene: SyntheticScene | None = None,
        seed: int = 0,
    ):
        self.truth_poses = truth_poses
        self.scale = float(scale)
        theta = math.radians(yaw_deg)
        c, s = math.cos(theta), math.sin(theta)
        self.rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        first = truth_poses[min(truth_poses)][:, 3]
        self.offset = first + np.asarray(offset, dtype=np.float64).reshape(3)
        self.jitter_sigma = float(jitter_sigma)
        self.lost_ranges = [tuple(r) for r in lost_ranges]
        self.sparse_count = int(sparse_count)
        self.scene = scene
        self.seed = int(seed)

    def to_visual(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        return ((pts - self.offset) @ self.rotation) / self.scale

    def _is_lost(self, frame_id: int) -> bool:
        return any(lo <= frame_id <= hi for lo, hi in self.lost_ranges)

    def track(self, frame: Frame) -> TrackResult:
        if frame.id not in self.truth_poses:
            return TrackResult(TrackStatus.LOST)
        if self._is_lost(frame.id):
            return TrackResult(TrackStatus.LOST)
        truth = self.truth_poses[frame.id]
        local_rot = self.rotation.T @ truth[:, :3]
        local_t = self.to_visual(truth[:, 3]).reshape(3)
        if self.jitter_sigma > 0:
            rng = np.random.default_rng((self.seed, frame.id))
            local_t = local_t + rng.normal(0.0, self.jitter_sigma / self.scale, 3)

        sparse = None
        if self.sparse_count > 0 and self.scene is not None:
            rng = np.random.default_rng((self.seed, frame.id, 1))
            cam = frame.camera
            uv = np.stack(
                [
                    rng.uniform(0, cam.width - 1, self.sparse_count),
                    rng.uniform(0, cam.height - 1, self.sparse_count),
                ],
                axis=1,
            )
            pose = Pose(
                truth[:, :3],
                UtmCoord(truth[0, 3], truth[1, 3], self.scene.zone,
                         self.scene.hemisphere, truth[2, 3]),
                PoseSource.VISUAL,
            )
            from .geo import pixel_ray_directions

            depths = self.scene.ray_depths(pose, cam, uv)
            dirs = pixel_ray_directions(cam, pose, uv)
            world = pose.center[None, :] + depths[:, None] * dirs
            sparse = self.to_visual(world)

        local = np.hstack([local_rot, local_t.reshape(3, 1)])
        return TrackResult(TrackStatus.TRACKING, local_pose=local, sparse_points=sparse)


class GroundTruthDensifier:
    """Exact per-pixel ray-cast depth against the scene heightfield; the
    single-frame window makes every published visual frame densifiable."""

    required_frame_count = 1

    def __init__(self, scene: SyntheticScene):
        self.scene = scene

    def densify(self, frames: Sequence[Frame]) -> DepthMap | None:
        frame = frames[len(frames) // 2]
        if frame.pose is None:
            return None
        depths = self.scene.depth_map(frame.pose, frame.camera)
        return DepthMap(width=frame.camera.width, height=frame.camera.height, depths=depths)


def _synthetic_provider_factory(options: dict, input_dir) -> SyntheticPoseProvider:
    if input_dir is None:
        raise ValueError("the synthetic pose provider needs the dataset directory")
    opts = dict(options)
    scene = None
    if opts.pop("sparse_count", 0) or opts.get("with_scene"):
        scene = load_scene(input_dir)
    opts.pop("with_scene", None)
    sparse_count = int(options.get("sparse_count", 0))
    return SyntheticPoseProvider(
        load_truth_poses(input_dir),
        scene=scene,
        sparse_count=sparse_count,
        **{k: v for k, v in opts.items() if k != "sparse_count"},
    )


def _groundtruth_densifier_factory(options: dict, input_dir) -> GroundTruthDensifier:
    if input_dir is None:
        raise ValueError("the ground-truth densifier needs the dataset directory")
    return GroundTruthDensifier(load_scene(input_dir))


register_pose_provider("synthetic", _synthetic_provider_factory)
register_densifier("groundtruth", _groundtruth_densifier_factory)
