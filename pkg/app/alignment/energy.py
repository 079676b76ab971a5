"""
Energias de alinhamento entre dois mapas de profundidade de keyframes.

T leva pontos da câmera fonte (theta2, pixels j) para a câmera alvo
(theta1). A escala s multiplica a profundidade alvo. Associação projetiva:
cada pixel fonte é reprojetado no alvo a cada avaliação.

Vetor de parâmetros dos jacobianos: (rho, omega, sigma, a2, b2), com
perturbação à esquerda de T, s = exp(sigma) e a1 = b1 = 0 ancorados.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple
import numpy as np
import cv2

from app.errors import EmptyOverlapError, TermUnavailableError, InvalidInputError
from app.geometry.camera import CameraIntrinsics, Z_MIN, backproject
from app.geometry.lie import PoseSE3
from app.geometry.maps import DepthMap, NormalMap
from app.geometry.transfer import normal_map

N_PARAMS = 9


@dataclass(frozen=True)
class CauchyKernel:
    c: float

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise InvalidInputError(f"Escala Cauchy precisa ser positiva, recebeu {self.c}")

    def rho(self, r: np.ndarray) -> np.ndarray:
        return 0.5 * self.c**2 * np.log1p((r / self.c) ** 2)

    def weight(self, r: np.ndarray) -> np.ndarray:
        """Peso IRLS psi'(r) / r"""
        return 1.0 / (1.0 + (r / self.c) ** 2)


@dataclass(frozen=True)
class AlignmentProblem:
    source_depth: DepthMap
    source_confidence: np.ndarray
    target_depth: DepthMap
    target_confidence: np.ndarray
    K: CameraIntrinsics
    source_image: Optional[np.ndarray] = None
    target_image: Optional[np.ndarray] = None
    init_pose: PoseSE3 = field(default_factory=PoseSE3.identity)
    init_scale: float = 1.0
    estimate_scale: bool = False
    use_photometric: bool = False
    weight: float = 0.25
    target_normals: Optional[NormalMap] = None

    def __post_init__(self) -> None:
        if self.source_depth.shape != self.target_depth.shape or self.source_depth.shape != self.K.shape:
            raise InvalidInputError("Resoluções incompatíveis no problema de alinhamento")
        if not self.init_scale > 0:
            raise InvalidInputError(f"s0 precisa ser positivo, recebeu {self.init_scale}")

    @property
    def has_images(self) -> bool:
        return self.source_image is not None and self.target_image is not None


@dataclass
class AlignmentLevel:
    """Dados pré-computados de um nível da pirâmide"""
    K: CameraIntrinsics
    points: np.ndarray
    confidence: np.ndarray
    source_intensity: Optional[np.ndarray]
    target_depth: np.ndarray
    target_valid: np.ndarray
    target_inverse: np.ndarray
    normals: np.ndarray
    normals_valid: np.ndarray
    target_image: Optional[np.ndarray]

    @classmethod
    def build(cls, problem: AlignmentProblem, stride: int = 1) -> "AlignmentLevel":
        K = problem.K.strided(stride) if stride > 1 else problem.K

        def sub(a: np.ndarray) -> np.ndarray:
            return a[::stride, ::stride] if stride > 1 else a

        def sub_image(img: Optional[np.ndarray]) -> Optional[np.ndarray]:
            if img is None:
                return None
            img = np.asarray(img, dtype=np.float64)
            if stride > 1:
                img = cv2.GaussianBlur(img, (0, 0), 0.5 * stride)
            return sub(img)

        src = DepthMap(sub(problem.source_depth.values), sub(problem.source_depth.valid))
        tgt = DepthMap(sub(problem.target_depth.values), sub(problem.target_depth.valid))
        conf = np.nan_to_num(sub(problem.source_confidence))
        use = src.valid & (conf > 0)
        points = backproject(np.where(src.valid, src.values, 1.0), K)[use]
        if stride == 1 and problem.target_normals is not None:
            normals = problem.target_normals
        else:
            normals = normal_map(tgt, K)
        src_img = sub_image(problem.source_image)
        return cls(
            K=K,
            points=points,
            confidence=conf[use],
            source_intensity=None if src_img is None else src_img[use],
            target_depth=np.where(tgt.valid, tgt.values, 1.0),
            target_valid=tgt.valid,
            target_inverse=tgt.inverse(),
            normals=np.nan_to_num(normals.values),
            normals_valid=normals.valid,
            target_image=sub_image(problem.target_image),
        )


@dataclass
class Terms:
    """Resíduos associados, confianças e jacobianos (n, N_PARAMS)"""
    residuals: np.ndarray
    confidence: np.ndarray
    jacobian: Optional[np.ndarray]
    n_source: int


def _project(level: AlignmentLevel, T: PoseSE3):
    q = level.points @ T.rotation.T + T.translation
    front = q[:, 2] > Z_MIN
    z = np.where(front, q[:, 2], 1.0)
    u = level.K.fx * q[:, 0] / z + level.K.cx
    v = level.K.fy * q[:, 1] / z + level.K.cy
    return q, z, u, v, front


def _bilinear_with_gradient(image: np.ndarray, valid: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Valor bilinear e derivadas em u e v; inválido se algum canto usado for inválido"""
    height, width = image.shape
    inside = (u >= 0) & (v >= 0) & (u <= width - 1) & (v <= height - 1)
    uc, vc = np.where(inside, u, 0.0), np.where(inside, v, 0.0)
    u0 = np.minimum(np.floor(uc).astype(np.int64), width - 2 if width > 1 else 0)
    v0 = np.minimum(np.floor(vc).astype(np.int64), height - 2 if height > 1 else 0)
    u1, v1 = np.minimum(u0 + 1, width - 1), np.minimum(v0 + 1, height - 1)
    du, dv = uc - u0, vc - v0
    f00, f10 = image[v0, u0], image[v0, u1]
    f01, f11 = image[v1, u0], image[v1, u1]
    ok = inside & valid[v0, u0] & valid[v0, u1] & valid[v1, u0] & valid[v1, u1]
    value = (1 - du) * (1 - dv) * f00 + du * (1 - dv) * f10 + (1 - du) * dv * f01 + du * dv * f11
    grad_u = (1 - dv) * (f10 - f00) + dv * (f11 - f01)
    grad_v = (1 - du) * (f01 - f00) + du * (f11 - f10)
    return value, grad_u, grad_v, ok


def _pose_columns(g: np.ndarray, q: np.ndarray) -> np.ndarray:
    """d r / d(rho, omega) a partir de g = d r / d q (perturbação à esquerda)"""
    return np.concatenate([g, np.cross(q, g)], axis=1)


def _projection_jacobian(level: AlignmentLevel, q: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    fx, fy = level.K.fx, level.K.fy
    du_dq = np.stack([fx / z, np.zeros_like(z), -fx * q[:, 0] / z**2], axis=1)
    dv_dq = np.stack([np.zeros_like(z), fy / z, -fy * q[:, 1] / z**2], axis=1)
    return du_dq, dv_dq


def point_to_plane_terms(level: AlignmentLevel, T: PoseSE3, s: float, jacobian: bool = True) -> Terms:
    """r = <n, s P1 - q> / (s theta1 q_z), P1 e n no pixel alvo mais próximo"""
    q, z, u, v, front = _project(level, T)
    K = level.K
    lu = np.rint(u).astype(np.int64)
    lv = np.rint(v).astype(np.int64)
    inside = front & (lu >= 0) & (lv >= 0) & (lu < K.width) & (lv < K.height)
    lu_c, lv_c = np.clip(lu, 0, K.width - 1), np.clip(lv, 0, K.height - 1)
    ok = inside & level.target_valid[lv_c, lu_c] & level.normals_valid[lv_c, lu_c]
    lu_c, lv_c, q, z = lu_c[ok], lv_c[ok], q[ok], z[ok]
    theta1 = level.target_depth[lv_c, lu_c]
    P1 = np.stack([(lu_c - K.cx) / K.fx * theta1, (lv_c - K.cy) / K.fy * theta1, theta1], axis=1)
    n = level.normals[lv_c, lu_c]
    D = s * theta1 * z
    r = np.einsum("ij,ij->i", n, s * P1 - q) / D
    J = None
    if jacobian:
        g = -n / D[:, None]
        g[:, 2] -= r / z
        J = np.zeros((r.size, N_PARAMS))
        J[:, :6] = _pose_columns(g, q)
        J[:, 6] = s * np.einsum("ij,ij->i", n, P1) / D - r
    return Terms(r, level.confidence[ok], J, level.points.shape[0])


def inverse_depth_terms(level: AlignmentLevel, T: PoseSE3, s: float, jacobian: bool = True) -> Terms:
    """r = rho1(l) / s - 1 / q_z com rho1 bilinear da profundidade inversa alvo"""
    q, z, u, v, front = _project(level, T)
    rho1, gu, gv, ok = _bilinear_with_gradient(level.target_inverse, level.target_valid, u, v)
    ok &= front
    q, z, rho1, gu, gv = q[ok], z[ok], rho1[ok], gu[ok], gv[ok]
    r = rho1 / s - 1.0 / z
    J = None
    if jacobian:
        du_dq, dv_dq = _projection_jacobian(level, q, z)
        g = (gu[:, None] * du_dq + gv[:, None] * dv_dq) / s
        g[:, 2] += 1.0 / z**2
        J = np.zeros((r.size, N_PARAMS))
        J[:, :6] = _pose_columns(g, q)
        J[:, 6] = -rho1 / s
    return Terms(r, level.confidence[ok], J, level.points.shape[0])


def photometric_terms(level: AlignmentLevel, T: PoseSE3, a2: float, b2: float, jacobian: bool = True) -> Terms:
    """r = I1(l) - exp(-a2) (I2 - b2), com a1 = b1 = 0"""
    if level.source_intensity is None or level.target_image is None:
        raise TermUnavailableError("Termo fotométrico exige as duas imagens")
    q, z, u, v, front = _project(level, T)
    valid = np.ones(level.target_image.shape, dtype=bool)
    i1, gu, gv, ok = _bilinear_with_gradient(level.target_image, valid, u, v)
    ok &= front
    q, z, i1, gu, gv = q[ok], z[ok], i1[ok], gu[ok], gv[ok]
    i2 = level.source_intensity[ok]
    gain = np.exp(-a2)
    r = i1 - gain * (i2 - b2)
    J = None
    if jacobian:
        du_dq, dv_dq = _projection_jacobian(level, q, z)
        g = gu[:, None] * du_dq + gv[:, None] * dv_dq
        J = np.zeros((r.size, N_PARAMS))
        J[:, :6] = _pose_columns(g, q)
        J[:, 7] = gain * (i2 - b2)
        J[:, 8] = gain
    return Terms(r, level.confidence[ok], J, level.points.shape[0])


def geometric_terms(level: AlignmentLevel, T: PoseSE3, s: float, kind: str, jacobian: bool = True) -> Terms:
    if kind == "inverse-depth":
        return inverse_depth_terms(level, T, s, jacobian)
    return point_to_plane_terms(level, T, s, jacobian)


def _energy(terms: Terms, kernel: CauchyKernel) -> float:
    if terms.residuals.size == 0:
        raise EmptyOverlapError("Nenhum pixel fonte associado a profundidade alvo válida")
    return float(np.sum(terms.confidence * kernel.rho(terms.residuals)))


def energy_inverse_depth(problem: AlignmentProblem, T: PoseSE3, s: float, c: float = 0.05):
    terms = inverse_depth_terms(AlignmentLevel.build(problem), T, s, jacobian=False)
    return _energy(terms, CauchyKernel(c)), terms.residuals


def energy_point_to_plane(problem: AlignmentProblem, T: PoseSE3, s: float, c: float = 0.05):
    terms = point_to_plane_terms(AlignmentLevel.build(problem), T, s, jacobian=False)
    return _energy(terms, CauchyKernel(c)), terms.residuals


def energy_photometric(problem: AlignmentProblem, T: PoseSE3, a1: float, a2: float, b1: float, b2: float,
                       c: float = 0.1) -> float:
    """E_photo com parâmetros afins gerais: (I1 - b1) - exp(a1 - a2) (I2 - b2)"""
    if not problem.has_images:
        raise TermUnavailableError("Termo fotométrico exige as duas imagens")
    level = AlignmentLevel.build(problem)
    terms = photometric_terms(level, T, a2 - a1, b2, jacobian=False)
    # (I1 - b1) - e^{a1-a2}(I2 - b2) = [I1 - e^{a1-a2}(I2 - b2)] - b1
    return _energy(Terms(terms.residuals - b1, terms.confidence, None, terms.n_source), CauchyKernel(c))
