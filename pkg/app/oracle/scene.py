"""
Cenas sintéticas analíticas para testes e aceitação.

Mundo e câmera seguem a mesma convenção: x à direita, y para baixo, z à
frente. Poses da trajetória são câmera -> mundo.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple
import numpy as np
from scipy.spatial.transform import Rotation

from app.geometry.camera import CameraIntrinsics
from app.geometry.lie import PoseSE3

DEFAULT_INTRINSICS = CameraIntrinsics(50.0, 50.0, 31.5, 23.5, 64, 48)


@dataclass(frozen=True)
class Plane:
    normal: np.ndarray
    offset: float
    textured: bool = True

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal, dtype=np.float64)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.offset - origin @ n) / denom
        return np.where(np.isfinite(t) & (t > 0), t, np.inf)


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray
    inside: bool = False
    textured: bool = True

    def shifted(self, offset: np.ndarray) -> "Box":
        return Box(np.asarray(self.lower) + offset, np.asarray(self.upper) + offset, self.inside, self.textured)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Método das placas; caixa sólida usa a entrada, sala (inside) usa a saída"""
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lower - origin) * inv
            t2 = (upper - origin) * inv
        t1 = np.nan_to_num(t1, nan=-np.inf)
        t2 = np.nan_to_num(t2, nan=np.inf)
        near = np.max(np.minimum(t1, t2), axis=-1)
        far = np.min(np.maximum(t1, t2), axis=-1)
        hit = far >= near
        t = far if self.inside else near
        return np.where(hit & (t > 0), t, np.inf)


@dataclass(frozen=True)
class MovingBox:
    box: Box
    velocity: np.ndarray

    def at(self, index: float) -> Box:
        return self.box.shifted(np.asarray(self.velocity, dtype=np.float64) * index)


@dataclass(frozen=True)
class NoiseSpec:
    flow_std: float = 0.0
    flow_outlier_fraction: float = 0.0
    flow_outlier_magnitude: float = 20.0
    depth_noise: float = 0.0


@dataclass(frozen=True)
class SyntheticScene:
    name: str
    K: CameraIntrinsics
    primitives: Tuple
    trajectory: Callable[[float], PoseSE3]
    n_frames: int
    moving: Optional[MovingBox] = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    baseline: float = 0.25
    seed: int = 0
    texture_frequency: float = 2.0
    frame_rate: float = 10.0

    def pose(self, index: int) -> PoseSE3:
        return self.trajectory(float(index))

    def poses(self) -> List[PoseSE3]:
        return [self.pose(k) for k in range(self.n_frames)]

    def timestamp(self, index: int) -> float:
        return index / self.frame_rate

    def with_noise(self, noise: NoiseSpec, seed: Optional[int] = None) -> "SyntheticScene":
        return replace(self, noise=noise, seed=self.seed if seed is None else seed)


def _look(yaw: float, pitch: float = 0.0) -> np.ndarray:
    """Rotação câmera -> mundo: guinada em torno de y (para baixo), arfagem em torno de x"""
    return Rotation.from_euler("yx", [yaw, pitch]).as_matrix()


def linear_trajectory(start, velocity, yaw: float = 0.0, yaw_rate: float = 0.0) -> Callable[[float], PoseSE3]:
    start = np.asarray(start, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)

    def pose(k: float) -> PoseSE3:
        return PoseSE3(_look(yaw + yaw_rate * k), start + velocity * k)
    return pose


def circle_trajectory(center, radius: float, n_frames: int, turns: float = 1.0) -> Callable[[float], PoseSE3]:
    """Volta no plano x-z olhando na direção tangente; o último frame reencontra o primeiro"""
    center = np.asarray(center, dtype=np.float64)

    def pose(k: float) -> PoseSE3:
        phi = 2.0 * np.pi * turns * k / max(n_frames - 1, 1)
        position = center + radius * np.array([np.sin(phi), 0.0, -np.cos(phi)])
        return PoseSE3(_look(np.pi / 2 - phi), position)
    return pose


def plane_scene(n_frames: int = 8, distance: float = 5.0, K: CameraIntrinsics = DEFAULT_INTRINSICS,
                step: float = 0.05, seed: int = 0) -> SyntheticScene:
    """Plano frontal a distance metros, câmera em movimento lateral"""
    return SyntheticScene(
        "plane", K, (Plane(np.array([0.0, 0.0, 1.0]), distance),),
        linear_trajectory([0.0, 0.0, 0.0], [step, 0.0, 0.2 * step]), n_frames, seed=seed,
    )


def slanted_plane_scene(n_frames: int = 8, K: CameraIntrinsics = DEFAULT_INTRINSICS, step: float = 0.05,
                        seed: int = 0) -> SyntheticScene:
    normal = np.array([0.3, 0.0, 1.0])
    normal /= np.linalg.norm(normal)
    return SyntheticScene(
        "slanted-plane", K, (Plane(normal, 5.0),),
        linear_trajectory([0.0, 0.0, 0.0], [step, 0.01, 0.3 * step], yaw_rate=0.002), n_frames, seed=seed,
    )


ROOM = Box(np.array([-4.0, -2.5, -4.0]), np.array([4.0, 1.5, 12.0]), inside=True)
ROOM_BOXES = (
    Box(np.array([-2.5, -0.5, 5.0]), np.array([-1.0, 1.5, 6.5])),
    Box(np.array([1.2, -1.0, 7.0]), np.array([2.8, 1.5, 8.0])),
    Box(np.array([-0.6, 0.3, 9.0]), np.array([0.6, 1.5, 10.0])),
)


def room_scene(n_frames: int = 60, trajectory: str = "forward", K: CameraIntrinsics = DEFAULT_INTRINSICS,
               seed: int = 0, speed: float = 0.08) -> SyntheticScene:
    """
    Sala fechada com caixas; trajetória 'forward' (corredor) ou 'loop' (volta completa).

    speed é o avanço em z por frame do corredor; sequências longas pedem
    passos menores para não atravessar as caixas.
    """
    if trajectory == "loop":
        path = circle_trajectory([0.0, -0.5, 3.0], 1.5, n_frames)
    else:
        path = linear_trajectory([0.0, -0.5, -3.0], [speed / 8.0, 0.0, speed], yaw_rate=0.001)
    return SyntheticScene(f"room-{trajectory}", K, (ROOM, *ROOM_BOXES), path, n_frames, seed=seed)


def moving_box_scene(n_frames: int = 8, K: CameraIntrinsics = DEFAULT_INTRINSICS, seed: int = 0) -> SyntheticScene:
    """Plano de fundo e uma caixa rígida em linha reta cobrindo ~10% da imagem"""
    box = Box(np.array([-0.6, -0.4, 2.6]), np.array([0.2, 0.4, 3.0]))
    return SyntheticScene(
        "moving-box", K, (Plane(np.array([0.0, 0.0, 1.0]), 6.0),),
        linear_trajectory([0.0, 0.0, 0.0], [0.04, 0.0, 0.01]), n_frames,
        moving=MovingBox(box, np.array([0.08, 0.0, 0.0])), seed=seed,
    )


def textureless_scene(n_frames: int = 8, K: CameraIntrinsics = DEFAULT_INTRINSICS, seed: int = 0) -> SyntheticScene:
    """Sala cujas paredes não têm textura; só as caixas são texturizadas"""
    room = Box(ROOM.lower, ROOM.upper, inside=True, textured=False)
    return SyntheticScene(
        "textureless", K, (room, *ROOM_BOXES),
        linear_trajectory([0.0, -0.5, -3.0], [0.01, 0.0, 0.08]), n_frames, seed=seed,
    )
