"""
Renderização analítica de profundidade, intensidade e fluxo.

Todo o caminho pixel -> raio -> ponto -> projeção é escrito aqui, sem
passar por app.geometry, para servir de oráculo independente.
"""
from typing import Tuple
import numpy as np

from app.geometry.maps import DepthMap, FlowField
from app.oracle.scene import SyntheticScene

STATIC = 0
MOVING = 1
NONE = -1
OCCLUSION_TOLERANCE = 1e-6


def _hash_table(seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 7919])
    return rng.permutation(256)


def value_noise(points: np.ndarray, seed: int, frequency: float = 2.0, octaves: int = 3) -> np.ndarray:
    """Ruído de valor 3D com banda limitada em [0, 1]"""
    perm = _hash_table(seed)
    lattice = np.random.default_rng([seed, 104729]).random(256)
    total = np.zeros(points.shape[:-1])
    norm = 0.0
    for octave in range(octaves):
        p = points * frequency * 2**octave
        base = np.floor(p).astype(np.int64)
        f = p - base
        w = f * f * (3.0 - 2.0 * f)
        acc = np.zeros(points.shape[:-1])
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    ix, iy, iz = (base[..., 0] + dx) & 255, (base[..., 1] + dy) & 255, (base[..., 2] + dz) & 255
                    h = lattice[perm[(perm[(perm[ix] + iy) & 255] + iz) & 255]]
                    weight = ((w[..., 0] if dx else 1 - w[..., 0]) * (w[..., 1] if dy else 1 - w[..., 1])
                              * (w[..., 2] if dz else 1 - w[..., 2]))
                    acc += weight * h
        amplitude = 0.5**octave
        total += amplitude * acc
        norm += amplitude
    return total / norm


def _rays(scene: SyntheticScene, index: float) -> Tuple[np.ndarray, np.ndarray]:
    """Origem e direções no mundo com componente z de câmera unitária (t = profundidade Z)"""
    K = scene.K
    u, v = np.meshgrid(np.arange(K.width, dtype=np.float64), np.arange(K.height, dtype=np.float64))
    cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    pose = scene.pose(index)
    return pose.translation.copy(), cam @ pose.rotation.T


def _trace(scene: SyntheticScene, frame: float, origin: np.ndarray, dirs: np.ndarray):
    """Menor t positivo entre as primitivas; rótulo STATIC, MOVING ou NONE e flag de textura"""
    best = np.full(dirs.shape[:-1], np.inf)
    label = np.full(dirs.shape[:-1], NONE, dtype=np.int64)
    textured = np.zeros(dirs.shape[:-1], dtype=bool)
    for primitive in scene.primitives:
        t = primitive.intersect(origin, dirs)
        closer = t < best
        best = np.where(closer, t, best)
        label = np.where(closer, STATIC, label)
        textured = np.where(closer, primitive.textured, textured)
    if scene.moving is not None:
        t = scene.moving.at(frame).intersect(origin, dirs)
        closer = t < best
        best = np.where(closer, t, best)
        label = np.where(closer, MOVING, label)
        textured = np.where(closer, scene.moving.box.textured, textured)
    return best, label, textured


def render_labels(scene: SyntheticScene, index: int) -> np.ndarray:
    origin, dirs = _rays(scene, index)
    return _trace(scene, index, origin, dirs)[1]


def render_frame(scene: SyntheticScene, index: int) -> Tuple[DepthMap, np.ndarray]:
    """Profundidade Z exata e intensidade procedural em [0, 1]"""
    origin, dirs = _rays(scene, index)
    t, label, textured = _trace(scene, index, origin, dirs)
    valid = np.isfinite(t)
    points = origin + dirs * np.where(valid, t, 0.0)[..., None]
    if scene.moving is not None:
        shift = np.asarray(scene.moving.velocity, dtype=np.float64) * index
        points = np.where((label == MOVING)[..., None], points - shift, points)
    intensity = value_noise(points, scene.seed, scene.texture_frequency)
    intensity = np.where(textured & valid, 0.1 + 0.8 * intensity, 0.5)
    depth = np.where(valid, t, np.nan)
    return DepthMap(depth, valid), intensity


def _flow_to_camera(scene: SyntheticScene, source: int, target: int, position: np.ndarray,
                    rotation: np.ndarray, frame_target: float) -> FlowField:
    """Fluxo dos pixels da fonte para uma câmera (position, rotation câmera -> mundo)"""
    K = scene.K
    origin, dirs = _rays(scene, source)
    t, label, _ = _trace(scene, source, origin, dirs)
    valid = np.isfinite(t)
    points = origin + dirs * np.where(valid, t, 0.0)[..., None]
    if scene.moving is not None:
        shift = np.asarray(scene.moving.velocity, dtype=np.float64) * (frame_target - source)
        points = np.where((label == MOVING)[..., None], points + shift, points)
    cam = (points - position) @ rotation
    z = cam[..., 2]
    front = valid & (z > 1e-6)
    zs = np.where(front, z, 1.0)
    u2 = K.fx * cam[..., 0] / zs + K.cx
    v2 = K.fy * cam[..., 1] / zs + K.cy
    # visibilidade: o raio da câmera alvo até o ponto não pode bater antes
    ray = (points - position) / zs[..., None]
    t_target, _, _ = _trace(scene, frame_target, position, ray)
    visible = front & (t_target >= zs * (1.0 - 1e-4) - OCCLUSION_TOLERANCE)
    u, v = np.meshgrid(np.arange(K.width, dtype=np.float64), np.arange(K.height, dtype=np.float64))
    values = np.stack([u2 - u, v2 - v], axis=-1)
    return FlowField(np.where(visible[..., None], values, 0.0), visible)


def render_flow(scene: SyntheticScene, source: int, target: int) -> FlowField:
    """Fluxo exato source -> target; pixels ocluídos ou atrás da câmera ficam inválidos"""
    if source == target:
        depth, _ = render_frame(scene, source)
        return FlowField(np.zeros(scene.K.shape + (2,)), depth.valid)
    pose = scene.pose(target)
    return _flow_to_camera(scene, source, target, pose.translation, pose.rotation, float(target))


def render_stereo_flow(scene: SyntheticScene, index: int, baseline: float = None) -> FlowField:
    """Fluxo esquerda -> direita do par retificado (câmera direita deslocada +baseline em x)"""
    baseline = scene.baseline if baseline is None else baseline
    pose = scene.pose(index)
    right = pose.translation + pose.rotation[:, 0] * baseline
    return _flow_to_camera(scene, index, index, right, pose.rotation, float(index))


def noisy_flow(scene: SyntheticScene, flow: FlowField, source: int, target: int, stream: int = 0) -> FlowField:
    """Ruído gaussiano e outliers uniformes determinísticos por (semente, source, target, stream)"""
    spec = scene.noise
    key = [scene.seed, source, target] + ([stream] if stream else [])
    rng = np.random.default_rng(key)
    values = flow.values + rng.normal(0.0, spec.flow_std, flow.values.shape) if spec.flow_std > 0 else flow.values.copy()
    if spec.flow_outlier_fraction > 0:
        outliers = rng.random(flow.shape) < spec.flow_outlier_fraction
        random = rng.uniform(-spec.flow_outlier_magnitude, spec.flow_outlier_magnitude, flow.values.shape)
        values = np.where(outliers[..., None], random, values)
    return FlowField(np.where(flow.valid[..., None], values, 0.0), flow.valid)
