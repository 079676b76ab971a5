"""Nuvem de pontos agregada dos keyframes em PLY binário little-endian"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union
import numpy as np

from app.errors import FormatError
from app.geometry.camera import CameraIntrinsics, backproject
from app.geometry.lie import PoseSE3, PoseSim3
from app.geometry.maps import DepthMap

VERTEX_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                         ("red", "u1"), ("green", "u1"), ("blue", "u1")])


@dataclass(frozen=True)
class KeyframeCloud:
    depth: DepthMap
    confidence: np.ndarray
    world_pose: Union[PoseSE3, PoseSim3]
    image: Optional[np.ndarray] = None


def keyframe_vertices(keyframes: Sequence[KeyframeCloud], K: CameraIntrinsics,
                      threshold: float) -> np.ndarray:
    chunks = []
    for kf in keyframes:
        keep = kf.depth.valid & (kf.confidence >= threshold)
        if not np.any(keep):
            continue
        points = backproject(np.where(kf.depth.valid, kf.depth.values, 1.0), K)[keep]
        world = kf.world_pose.apply(points)
        gray = kf.image[keep] if kf.image is not None else np.full(world.shape[0], 0.5)
        level = np.clip(np.rint(gray * 255.0), 0, 255).astype(np.uint8)
        chunk = np.empty(world.shape[0], dtype=VERTEX_DTYPE)
        chunk["x"], chunk["y"], chunk["z"] = world[:, 0], world[:, 1], world[:, 2]
        chunk["red"] = chunk["green"] = chunk["blue"] = level
        chunks.append(chunk)
    return np.concatenate(chunks) if chunks else np.empty(0, dtype=VERTEX_DTYPE)


def write_pointcloud_ply(keyframes: Sequence[KeyframeCloud], K: CameraIntrinsics, threshold: float, path) -> int:
    """Grava os pixels com confiança >= threshold; devolve o número de vértices"""
    vertices = keyframe_vertices(keyframes, K, threshold)
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {vertices.size}\n"
              "property float x\nproperty float y\nproperty float z\n"
              "property uchar red\nproperty uchar green\nproperty uchar blue\n"
              "end_header\n")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(vertices.tobytes())
    logging.info(f"📊 Nuvem de pontos: {vertices.size} vértices em {path}")
    return int(vertices.size)


def read_ply(path) -> Tuple[np.ndarray, np.ndarray]:
    """Leitor mínimo do layout gravado acima: (N, 3) float32 e (N, 3) uint8"""
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: cabeçalho PLY inválido", offset=0)
    header = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise FormatError(f"{path}: apenas PLY binário little-endian é suportado", offset=4)
    count = next((int(line.split()[2]) for line in header if line.startswith("element vertex")), None)
    if count is None:
        raise FormatError(f"{path}: elemento vertex ausente", offset=0)
    start = end + len(b"end_header\n")
    if len(raw) - start != count * VERTEX_DTYPE.itemsize:
        raise FormatError(f"{path}: payload com tamanho inconsistente", offset=len(raw))
    data = np.frombuffer(raw, dtype=VERTEX_DTYPE, count=count, offset=start)
    xyz = np.stack([data["x"], data["y"], data["z"]], axis=1)
    rgb = np.stack([data["red"], data["green"], data["blue"]], axis=1)
    return xyz, rgb
