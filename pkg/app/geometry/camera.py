"""Modelo pinhole, retroprojeção e amostragem bilinear.

Convenção: sistema destro, Z para frente, origem do pixel no canto superior
esquerdo, pixel = (u, v) = (coluna, linha), fluxo guardado como (dx, dy).
"""
from dataclasses import dataclass
from typing import Tuple
import numpy as np

from app.errors import InvalidInputError, BehindCameraError

Z_MIN = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"Focais precisam ser positivas: fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError(f"Tamanho de imagem inválido: {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInputError(f"Ponto principal fora da imagem: ({self.cx}, {self.cy})")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def strided(self, k: int) -> "CameraIntrinsics":
        """Intrínsecos da sub-grade de passo k (u_full = k * u_small)"""
        if k < 1:
            raise InvalidInputError(f"Passo precisa ser >= 1, recebeu {k}")
        width = (self.width + k - 1) // k
        height = (self.height + k - 1) // k
        return CameraIntrinsics(self.fx / k, self.fy / k, self.cx / k, self.cy / k, width, height)

    def pixel_grid(self) -> Tuple[np.ndarray, np.ndarray]:
        """Coordenadas (u, v) de todos os pixels, formato (H, W)"""
        v, u = np.mgrid[0:self.height, 0:self.width]
        return u.astype(np.float64), v.astype(np.float64)

    def in_bounds(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return (u >= 0) & (v >= 0) & (u <= self.width - 1) & (v <= self.height - 1)


def pixel_to_point(pixel, depth: float, K: CameraIntrinsics) -> np.ndarray:
    """Retroprojetar um pixel com profundidade Z (o ponto resultante tem Z = depth)"""
    if not depth > 0:
        raise InvalidInputError(f"Profundidade precisa ser positiva, recebeu {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    return np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, float(depth)])


def point_to_pixel(point, K: CameraIntrinsics, z_min: float = Z_MIN) -> np.ndarray:
    x, y, z = (float(c) for c in point)
    if z <= z_min:
        raise BehindCameraError(f"Ponto atrás da câmera (Z={z})")
    return np.array([K.fx * x / z + K.cx, K.fy * y / z + K.cy])


def backproject(depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Nuvem (H, W, 3) da retroprojeção densa; pixels inválidos herdam NaN/0 da profundidade"""
    u, v = K.pixel_grid()
    return np.stack([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth], axis=-1)


def project(points: np.ndarray, K: CameraIntrinsics, z_min: float = Z_MIN) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Projetar pontos (..., 3); devolve u, v e máscara Z > z_min"""
    z = points[..., 2]
    front = z > z_min
    safe_z = np.where(front, z, 1.0)
    u = K.fx * points[..., 0] / safe_z + K.cx
    v = K.fy * points[..., 1] / safe_z + K.cy
    return u, v, front


def bilinear_sample(image: np.ndarray, u: np.ndarray, v: np.ndarray,
                    valid: np.ndarray = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Amostragem bilinear em coordenadas contínuas.

    Args:
        image: (H, W) ou (H, W, C)
        u, v: coordenadas de coluna e linha (mesmo formato)
        valid: máscara (H, W) dos pixels utilizáveis da imagem

    Returns:
        valores amostrados e máscara de validade (dentro da imagem e todos os
        vizinhos com peso não nulo válidos)
    """
    height, width = image.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    inside = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (v >= 0) & (u <= width - 1) & (v <= height - 1)
    uc = np.where(inside, u, 0.0)
    vc = np.where(inside, v, 0.0)
    u0 = np.clip(np.floor(uc).astype(np.int64), 0, width - 1)
    v0 = np.clip(np.floor(vc).astype(np.int64), 0, height - 1)
    u1 = np.minimum(u0 + 1, width - 1)
    v1 = np.minimum(v0 + 1, height - 1)
    du = uc - u0
    dv = vc - v0

    img = np.asarray(image, dtype=np.float64)
    ok = np.ones(img.shape[:2], dtype=bool) if valid is None else valid.astype(bool)
    ok = ok & np.all(np.isfinite(img.reshape(height, width, -1)), axis=-1)
    clean = np.where(ok.reshape(ok.shape + (1,) * (img.ndim - 2)), img, 0.0)

    out = np.zeros(u.shape + img.shape[2:], dtype=np.float64)
    result_valid = inside.copy()
    for vi, ui, w in ((v0, u0, (1 - du) * (1 - dv)), (v0, u1, du * (1 - dv)),
                      (v1, u0, (1 - du) * dv), (v1, u1, du * dv)):
        used = w > 1e-12
        result_valid &= ~used | ok[vi, ui]
        weight = w.reshape(w.shape + (1,) * (img.ndim - 2))
        out += weight * clean[vi, ui]
    out[~result_valid] = np.nan
    return out, result_valid
