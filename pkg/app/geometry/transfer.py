"""Transferência de profundidade entre câmeras, fluxo rígido e normais"""
from dataclasses import dataclass
from typing import Tuple
import numpy as np

from app.errors import InvalidInputError, BehindCameraError
from app.geometry.camera import CameraIntrinsics, Z_MIN, pixel_to_point, backproject, project
from app.geometry.lie import PoseSE3
from app.geometry.maps import DepthMap, FlowField, NormalMap


@dataclass(frozen=True)
class Reprojection:
    pixel: np.ndarray
    index: Tuple[int, int]
    in_bounds: bool
    depth: float


def transfer_point(theta: float, pixel, T: PoseSE3, K: CameraIntrinsics) -> np.ndarray:
    """phi(theta, T): ponto do pixel j com profundidade theta levado pela pose T"""
    if not theta > 0:
        raise InvalidInputError(f"Profundidade precisa ser positiva, recebeu {theta}")
    return T.apply(pixel_to_point(pixel, theta, K))


def reproject(theta: float, pixel, T: PoseSE3, K: CameraIntrinsics, z_min: float = Z_MIN) -> Reprojection:
    point = transfer_point(theta, pixel, T, K)
    if point[2] <= z_min:
        raise BehindCameraError(f"Profundidade transferida {point[2]:.3g} <= z_min")
    ell = np.array([K.fx * point[0] / point[2] + K.cx, K.fy * point[1] / point[2] + K.cy])
    index = (int(np.rint(ell[0])), int(np.rint(ell[1])))
    inside = 0 <= index[0] < K.width and 0 <= index[1] < K.height
    return Reprojection(ell, index, inside, float(point[2]))


def transfer_dense(depth: np.ndarray, valid: np.ndarray, T: PoseSE3, K: CameraIntrinsics,
                   z_min: float = Z_MIN) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Versão densa de reproject.

    Returns:
        u, v contínuos no quadro de destino, Z transferido e máscara
        (profundidade válida e à frente da câmera)
    """
    safe = np.where(valid, depth, 1.0)
    points = T.apply(backproject(safe, K))
    u, v, front = project(points, K, z_min)
    ok = valid & front
    return u, v, points[..., 2], ok


def rigid_flow(depth: DepthMap, T: PoseSE3, K: CameraIntrinsics, z_min: float = Z_MIN) -> FlowField:
    """Fluxo induzido pela profundidade e pela pose; pixels fora da imagem continuam válidos"""
    u, v, _, ok = transfer_dense(depth.values, depth.valid, T, K, z_min)
    u0, v0 = K.pixel_grid()
    flow = np.stack([u - u0, v - v0], axis=-1)
    flow[~ok] = np.nan
    return FlowField(flow, ok)


def normal_map(depth: DepthMap, K: CameraIntrinsics, max_jump: float = 0.1) -> NormalMap:
    """
    Normais por diferenças centrais sobre os pontos retroprojetados.

    Exige a janela 3x3 inteira válida (fora da imagem não conta) e vizinhos
    sem salto relativo de profundidade acima de max_jump; diferenças
    unilaterais só na borda da imagem. Orientadas para a câmera (n . P < 0).
    """
    height, width = depth.shape
    points = backproject(np.where(depth.valid, depth.values, np.nan), K)
    z = depth.values
    ok = depth.valid

    def neighbor(dy: int, dx: int) -> Tuple[np.ndarray, np.ndarray]:
        shifted = np.full_like(points, np.nan)
        mask = np.zeros((height, width), dtype=bool)
        ys = slice(max(dy, 0), height + min(dy, 0))
        yd = slice(max(-dy, 0), height + min(-dy, 0))
        xs = slice(max(dx, 0), width + min(dx, 0))
        xd = slice(max(-dx, 0), width + min(-dx, 0))
        shifted[yd, xd] = points[ys, xs]
        mask[yd, xd] = ok[ys, xs]
        with np.errstate(invalid="ignore"):
            mask &= np.abs(shifted[..., 2] - z) <= max_jump * np.where(ok, z, np.inf)
        return shifted, mask

    def derivative(a: Tuple[np.ndarray, np.ndarray], b: Tuple[np.ndarray, np.ndarray],
                   first: np.ndarray, last: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        (p_prev, m_prev), (p_next, m_next) = a, b
        both = m_prev & m_next
        d = np.where(both[..., None], p_next - p_prev,
                     np.where(m_next[..., None], p_next - points,
                              np.where(m_prev[..., None], points - p_prev, np.nan)))
        # diferença de um lado só apenas na borda da imagem
        usable = np.where(first, m_next, np.where(last, m_prev, both))
        return d, usable & ok

    rows, cols = np.mgrid[0:height, 0:width]
    du, ok_u = derivative(neighbor(0, -1), neighbor(0, 1), cols == 0, cols == width - 1)
    dv, ok_v = derivative(neighbor(-1, 0), neighbor(1, 0), rows == 0, rows == height - 1)
    padded = np.pad(ok, 1, constant_values=True)
    window = np.ones_like(ok)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            window &= padded[1 + dy:1 + dy + height, 1 + dx:1 + dx + width]
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1)
    valid = ok_u & ok_v & window & np.isfinite(norm) & (norm > 1e-12)
    n = np.where(valid[..., None], n / np.where(valid, norm, 1.0)[..., None], np.nan)
    facing = np.einsum("hwc,hwc->hw", np.nan_to_num(n), np.nan_to_num(points))
    n = np.where((facing > 0)[..., None], -n, n)
    return NormalMap(n, valid)
