import numpy as np
import pytest

from app.config import PipelineConfig
from app.geometry.camera import CameraIntrinsics
from app.geometry.lie import PoseSE3
from app.geometry.maps import DepthMap
from app.oracle.scene import DEFAULT_INTRINSICS, plane_scene, room_scene
from app.oracle.render import render_frame, render_flow


@pytest.fixture
def camera() -> CameraIntrinsics:
    return DEFAULT_INTRINSICS


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def plane_depth(camera) -> DepthMap:
    """Plano frontal a 5 m"""
    return DepthMap(np.full(camera.shape, 5.0), np.ones(camera.shape, dtype=bool))


@pytest.fixture(scope="session")
def room():
    return room_scene(n_frames=12, trajectory="forward")


@pytest.fixture(scope="session")
def plane():
    return plane_scene(n_frames=8)


@pytest.fixture(scope="session")
def room_frames(room):
    """Profundidade e intensidade exatas dos frames 0..3 da sala"""
    return [render_frame(room, k) for k in range(4)]


def _relative_pose(scene, source: int, target: int) -> PoseSE3:
    """Pose que leva pontos da câmera source para a câmera target"""
    return scene.pose(target).inverse() @ scene.pose(source)


@pytest.fixture
def relative_pose():
    return _relative_pose


@pytest.fixture
def fast_config(tmp_path) -> PipelineConfig:
    return PipelineConfig(pose_samples=150, n_em=2, output_dir=str(tmp_path / "out"), sync=True)


@pytest.fixture(scope="session")
def room_flow(room):
    return render_flow(room, 0, 2)
