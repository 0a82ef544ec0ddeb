import numpy as np
import pytest

from airmosaic.geo import CameraModel, Frame, Pose, PoseSource, UtmCoord, utm_to_wgs84

SMALL_CAMERA = CameraModel(fx=100.0, fy=100.0, cx=60.0, cy=45.0, width=120, height=90)

BASE_E = 498000.0
BASE_N = 5762000.0
ZONE = 32


def make_frame(
    frame_id: int,
    easting: float = BASE_E,
    northing: float = BASE_N,
    altitude: float = 30.0,
    heading: float = 0.0,
    camera: CameraModel = SMALL_CAMERA,
    image: np.ndarray | None = None,
    pose: Pose | None = None,
    **kwargs,
) -> Frame:
    if image is None:
        image = np.full((camera.height, camera.width, 3), 0.5, dtype=np.float32)
    geotag = utm_to_wgs84(UtmCoord(easting, northing, ZONE, "north", altitude))
    return Frame(
        id=frame_id,
        timestamp=frame_id * 0.5,
        image=image,
        geotag=geotag,
        heading=heading,
        camera=camera,
        pose=pose,
        **kwargs,
    )


def visual_pose(easting: float, northing: float, altitude: float, heading: float = 0.0) -> Pose:
    from airmosaic.geo import heading_rotation

    return Pose(
        heading_rotation(heading),
        UtmCoord(easting, northing, ZONE, "north", altitude),
        PoseSource.VISUAL,
    )


@pytest.fixture(scope="session")
def flat_dataset(tmp_path_factory):
    """Small flat checkerboard dataset shared by integration tests."""
    from airmosaic.synth import SceneSpec, generate

    spec = SceneSpec(
        extent=(60.0, 60.0),
        altitude=30.0,
        speed=6.0,
        frame_rate=1.0,
        camera=SMALL_CAMERA,
        texture_params={"period": 6.0, "texel": 1.0, "seed": 3},
    )
    out = tmp_path_factory.mktemp("flat_dataset")
    generate(spec, out)
    return out


@pytest.fixture(scope="session")
def ridge_scene():
    from airmosaic.synth import SceneSpec, SyntheticScene

    spec = SceneSpec(
        extent=(60.0, 60.0),
        altitude=30.0,
        speed=6.0,
        frame_rate=1.0,
        camera=SMALL_CAMERA,
        heightfield="ridge",
        height_params={"amplitude": 6.0, "half_width": 15.0},
    )
    return SyntheticScene(spec)
