"""Transport and process control: one-directional staged pipeline.

Each stage runs on its own worker thread; bounded single-producer
single-consumer queues are the only cross-worker channel, and frames are
transferred downstream, never shared mutably. Blocking puts give
backpressure, so the memory high-water mark is independent of input length.
Per-stage input/output message rates are tracked over a sliding window;
their ratio is the performance measure (1.0 keeps up, above 1.0 is
overloaded). Input rates are recorded at message arrival (enqueue), matching
a pub/sub transport where arrival is not gated by the consumer.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .densify_stage import DensifyStage, make_densifier
from .geo import CameraModel, Frame, GeoPoint, PointCloud
from .grid import LayeredGrid
from .mosaic_stage import BlendConfig, MosaicStage
from .pose_stage import PoseStage, StagePoseConfig, make_pose_provider
from .raster_io import load_image, write_asc, write_color_image, write_ply
from .rectify_stage import RectifyStage
from .surface_stage import SurfaceStage

logger = logging.getLogger(__name__)

FLUSH = object()  # drains every stage when the input is exhausted

DEFAULT_STATS_WINDOW = 10.0

MODES = ("gnss", "visual", "elevation")


class ConfigError(ValueError):
    pass


class IngestError(ValueError):
    pass


class StageStats:
    """Windowed input/output message frequencies of one stage."""

    def __init__(self, stage_name: str, window: float = DEFAULT_STATS_WINDOW):
        self.stage_name = stage_name
        self.window = window
        self._events = {"in": deque(), "out": deque()}
        self._lock = threading.Lock()

    def record(self, direction: str, timestamp: float) -> None:
        with self._lock:
            events = self._events[direction]
            events.append(timestamp)
            cutoff = timestamp - self.window
            while events and events[0] < cutoff:
                events.popleft()

    def _frequency(self, direction: str, now: float) -> float:
        cutoff = now - self.window
        events = self._events[direction]
        return sum(1 for t in events if t >= cutoff) / self.window

    def sample(self, now: float | None = None) -> dict:
        now = time.monotonic() if now is None else now
        with self._lock:
            f_in = self._frequency("in", now)
            f_out = self._frequency("out", now)
        delta = f_in / f_out if f_out > 0 else float("nan")
        return {"f_in": f_in, "f_out": f_out, "delta_perf": delta}


def record_message(stats: StageStats, direction: str, timestamp: float) -> StageStats:
    stats.record(direction, timestamp)
    return stats


class PipelineAborted(RuntimeError):
    pass


class Link:
    """Bounded SPSC queue between two stages, instrumented for rate tracking.

    The consumer closes its link when it exits; producers blocked on a closed
    link raise PipelineAborted, which cascades the shutdown upstream while
    everything already queued downstream still drains into partial outputs.
    """

    def __init__(
        self,
        capacity: int,
        producer_stats: StageStats | None = None,
        consumer_stats: StageStats | None = None,
    ):
        self._q: queue.Queue = queue.Queue(maxsize=capacity)
        self.closed = threading.Event()
        self.producer_stats = producer_stats
        self.consumer_stats = consumer_stats
        self.frames_passed = 0

    def put(self, item) -> None:
        while True:
            if self.closed.is_set():
                raise PipelineAborted()
            try:
                self._q.put(item, timeout=0.1)
                break
            except queue.Full:
                continue
        if item is not FLUSH:
            t = time.monotonic()
            self.frames_passed += 1
            if self.producer_stats is not None:
                self.producer_stats.record("out", t)
            if self.consumer_stats is not None:
                self.consumer_stats.record("in", t)

    def get(self):
        return self._q.get()

    def close(self) -> None:
        self.closed.set()

    def qsize(self) -> int:
        return self._q.qsize()


class StageWorker(threading.Thread):
    """Runs one stage processor: consume, process, publish, flush on drain.

    Every producer either forwards a flush token or dies because its consumer
    closed the link, so no worker can wait forever on its input.
    """

    def __init__(
        self,
        name: str,
        processor,
        in_link: Link,
        out_link: Link | None,
        throttle: float = 0.0,
    ):
        super().__init__(name=f"stage-{name}", daemon=True)
        self.stage_name = name
        self.processor = processor
        self.in_link = in_link
        self.out_link = out_link
        self.throttle = throttle
        self.done = threading.Event()
        self.error: BaseException | None = None

    def _publish(self, frames) -> None:
        if self.out_link is None:
            return
        for frame in frames:
            self.out_link.put(frame)

    def run(self) -> None:
        try:
            while True:
                item = self.in_link.get()
                if item is FLUSH:
                    self._publish(self.processor.flush())
                    if self.out_link is not None:
                        self.out_link.put(FLUSH)
                    break
                if self.throttle > 0:
                    time.sleep(self.throttle)
                self._publish(self.processor.process(item))
        except PipelineAborted:
            pass
        except BaseException as exc:  # a stage panic aborts the whole pipeline
            logger.exception("stage %s failed", self.stage_name)
            self.error = exc
            if self.out_link is not None:
                try:  # downstream drains what already passed this stage
                    self.out_link.put(FLUSH)
                except PipelineAborted:
                    pass
        finally:
            self.in_link.close()
            self.done.set()


# -- ingestion ---------------------------------------------------------------------


def load_calibration(path: str | Path) -> CameraModel:
    data = yaml.safe_load(Path(path).read_text())
    try:
        return CameraModel(
            fx=float(data["fx"]), fy=float(data["fy"]),
            cx=float(data["cx"]), cy=float(data["cy"]),
            width=int(data["width"]), height=int(data["height"]),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad calibration file {path}: {exc}") from exc


def ingest_frame(
    image_path: Path, sidecar_path: Path, camera: CameraModel, frame_id: int
) -> Frame:
    """Read one image plus metadata sidecar into a Frame."""
    try:
        meta = yaml.safe_load(sidecar_path.read_text())
        geotag = GeoPoint(float(meta["lat"]), float(meta["lon"]), float(meta["alt"]))
        heading = float(meta["heading"])
        timestamp = float(meta["timestamp"])
    except (KeyError, TypeError, ValueError, OSError, yaml.YAMLError) as exc:
        raise IngestError(f"{sidecar_path.name}: {exc}") from exc
    image = load_image(image_path)
    if (image.shape[1], image.shape[0]) != (camera.width, camera.height):
        raise IngestError(
            f"{image_path.name}: image {image.shape[1]}x{image.shape[0]} does not "
            f"match calibration {camera.width}x{camera.height}"
        )
    return Frame(
        id=frame_id,
        timestamp=timestamp,
        image=image,
        geotag=geotag,
        heading=heading,
        camera=camera,
        gimbal_stabilized=bool(meta.get("gimbal", True)),
    )


def scan_dataset(input_dir: Path) -> list[tuple[Path, Path, float]]:
    """(image, sidecar, timestamp) triples in timestamp order; frames with an
    unreadable sidecar sort by filename at the end and fail later in ingest."""
    frames_dir = input_dir / "frames"
    if not frames_dir.is_dir():
        raise ConfigError(f"no frames/ directory under {input_dir}")
    entries = []
    for image_path in sorted(frames_dir.glob("*.png")):
        sidecar = image_path.with_suffix(".yaml")
        try:
            meta = yaml.safe_load(sidecar.read_text())
            ts = float(meta["timestamp"])
        except Exception:
            ts = float("inf")
        entries.append((image_path, sidecar, ts))
    entries.sort(key=lambda e: (e[2], e[0].name))
    return entries


# -- export -----------------------------------------------------------------------


def export_snapshot(
    global_map: LayeredGrid, out_dir: str | Path, cloud: PointCloud | None = None
) -> list[Path]:
    """Write the operator-facing products: color raster plus world file,
    elevation and variance grids, optionally the dense cloud."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    img, world = write_color_image(global_map, out / "mosaic.png")
    written += [img, world]
    written.append(write_asc(global_map, "elevation", out / "elevation.asc"))
    if "elevation_variance" in global_map.layers:
        written.append(
            write_asc(global_map, "elevation_variance", out / "elevation_variance.asc")
        )
    if cloud is not None and len(cloud):
        written.append(write_ply(cloud, out / "cloud.ply"))
    return written


# -- configuration -----------------------------------------------------------------


@dataclass
class PipelineConfig:
    mode: str
    input_dir: Path
    output_dir: Path
    output_gsd: float | None = None
    variance_threshold: float = 1.0
    angle_tiebreak: bool = True
    snapshot_every: int = 0
    queue_capacity: int = 8
    pose_provider: str = "none"
    pose_options: dict = field(default_factory=dict)
    densifier: str = "groundtruth"
    densifier_options: dict = field(default_factory=dict)
    stride: int = 2
    pose: StagePoseConfig = field(default_factory=StagePoseConfig)
    export_cloud: bool = False
    stats_window: float = DEFAULT_STATS_WINDOW

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.input_dir = Path(self.input_dir)
        self.output_dir = Path(self.output_dir)
        if self.output_gsd is not None and self.output_gsd <= 0:
            raise ConfigError("output gsd must be positive")
        if self.variance_threshold <= 0:
            raise ConfigError("variance threshold must be positive")
        if self.queue_capacity < 1:
            raise ConfigError("queue capacity must be at least 1")
        if self.mode == "gnss":
            self.pose_provider = "none"
            self.pose.fallback_enabled = True


@dataclass
class PipelineReport:
    status: str
    mode: str
    frames_ingested: int = 0
    frames_skipped: int = 0
    frames_fused: int = 0
    published: dict = field(default_factory=dict)
    stage_stats: dict = field(default_factory=dict)
    surface_gsd: list = field(default_factory=list)
    global_gsd: float | None = None
    georeference_rmse: float | None = None
    max_in_flight: int = 0
    runtime_s: float = 0.0
    outputs: list = field(default_factory=list)
    error: str | None = None

    def to_json(self) -> str:
        data = dict(self.__dict__)
        data["outputs"] = [str(p) for p in self.outputs]
        return json.dumps(data, indent=2)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path


# -- orchestration --------------------------------------------------------------------


def run(config: PipelineConfig) -> PipelineReport:
    """Execute a full mapping run: ingest, stream through stages, export."""
    t_start = time.monotonic()
    report = PipelineReport(status="ok", mode=config.mode)

    entries = scan_dataset(config.input_dir)
    camera = load_calibration(config.input_dir / "calibration.yaml")
    config.output_dir.mkdir(parents=True, exist_ok=True)

    provider = make_pose_provider(config.pose_provider, config.pose_options, config.input_dir)
    densifier = None
    if config.mode == "elevation" and config.densifier != "none":
        densifier = make_densifier(config.densifier, config.densifier_options, config.input_dir)

    pose_stage = PoseStage(provider, config.pose)
    surface_stage = SurfaceStage(force_planar=config.mode != "elevation")
    rectify_stage = RectifyStage(config.output_gsd)

    def snapshot_exporter(grid: LayeredGrid, fused_count: int) -> None:
        try:
            export_snapshot(grid, config.output_dir / "snapshots" / f"{fused_count:06d}")
        except OSError:
            logger.exception("snapshot export failed; pipeline continues")

    mosaic_stage = MosaicStage(
        BlendConfig(config.variance_threshold, config.angle_tiebreak),
        snapshot_every=config.snapshot_every,
        on_snapshot=snapshot_exporter if config.snapshot_every > 0 else None,
        collect_clouds=config.export_cloud,
    )

    processors = [("pose", pose_stage)]
    if config.mode == "elevation":
        processors.append(("densify", DensifyStage(densifier, config.stride)))
    processors.append(("surface", surface_stage))
    processors.append(("rectify", rectify_stage))
    processors.append(("mosaic", mosaic_stage))

    stats = {name: StageStats(name, config.stats_window) for name, _ in processors}
    links: list[Link] = []
    upstream_stats = None
    for name, _ in processors:
        links.append(Link(config.queue_capacity, upstream_stats, stats[name]))
        upstream_stats = stats[name]

    workers = []
    for (name, processor), in_link, out_link in zip(
        processors, links, links[1:] + [None]
    ):
        workers.append(StageWorker(name, processor, in_link, out_link))
    for w in workers:
        w.start()

    ingested = 0
    skipped = 0
    max_in_flight = 0

    def source() -> None:
        # The in-flight high-water mark is sampled here, after every put:
        # with bounded queues it stays independent of the input length.
        nonlocal ingested, skipped, max_in_flight
        try:
            for image_path, sidecar_path, _ in entries:
                frame_id = ingested + skipped
                try:
                    frame = ingest_frame(image_path, sidecar_path, camera, frame_id)
                except IngestError as exc:
                    skipped += 1
                    logger.warning("skipping frame: %s", exc)
                    continue
                links[0].put(frame)
                ingested += 1
                max_in_flight = max(max_in_flight, ingested - mosaic_stage.fused)
        except PipelineAborted:
            return
        try:
            links[0].put(FLUSH)
        except PipelineAborted:
            pass

    source_thread = threading.Thread(target=source, name="source", daemon=True)
    source_thread.start()

    history: dict[str, list] = {name: [] for name, _ in processors}
    sink = workers[-1]
    while not sink.done.wait(timeout=0.25):
        now = time.monotonic()
        for name in history:
            entry = stats[name].sample(now)
            entry["t"] = now - t_start
            history[name].append(entry)
    for w in workers:
        w.join(timeout=5.0)
    source_thread.join(timeout=5.0)

    failed = [w for w in workers if w.error is not None]
    report.status = "aborted" if failed else "ok"
    if failed:
        report.error = f"stage {failed[0].stage_name}: {failed[0].error}"

    report.frames_ingested = ingested
    report.frames_skipped = skipped
    report.frames_fused = mosaic_stage.fused
    report.published = {
        name: link.frames_passed for (name, _), link in zip(processors[1:], links[1:])
    }
    report.published["ingest"] = links[0].frames_passed
    report.stage_stats = history
    report.surface_gsd = surface_stage.gsd_history
    report.georeference_rmse = pose_stage.georeference_rmse
    report.max_in_flight = max_in_flight

    snapshot = mosaic_stage.snapshot()
    if snapshot is not None:
        report.global_gsd = snapshot.gsd
        cloud = None
        if config.export_cloud:
            cloud = _merge_clouds(mosaic_stage)
        try:
            report.outputs = [
                str(p) for p in export_snapshot(snapshot, config.output_dir / "final", cloud)
            ]
        except OSError:
            logger.exception("final export failed")

    report.runtime_s = time.monotonic() - t_start
    report.save(config.output_dir / "report.json")
    return report


def _merge_clouds(mosaic_stage: MosaicStage) -> PointCloud | None:
    if not mosaic_stage.clouds:
        return None
    return PointCloud(
        np.concatenate([c.points for c in mosaic_stage.clouds]),
        np.concatenate(
            [
                c.colors if c.colors is not None else np.full((len(c), 3), 0.5, np.float32)
                for c in mosaic_stage.clouds
            ]
        ),
    )
