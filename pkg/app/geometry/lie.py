"""
Grupos SE(3) e Sim(3) com exp/log fechados.

Tangente de SE(3): (rho, omega), translação primeiro.
Tangente de Sim(3): (rho, omega, sigma) com escala s = exp(sigma).
Sim(3) age como x -> s R x + t.
"""
from dataclasses import dataclass
from typing import Tuple
import numpy as np

from app.errors import InvalidInputError

ORTHO_TOL = 1e-6
NEAR_PI = 1e-3


def hat(w: np.ndarray) -> np.ndarray:
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def vee(S: np.ndarray) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues"""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    W = hat(w)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * W @ W
    return np.eye(3) + np.sin(theta) / theta * W + (1.0 - np.cos(theta)) / theta**2 * W @ W


def so3_log(R: np.ndarray) -> np.ndarray:
    """
    Logaritmo de SO(3).

    Perto de ângulo pi o eixo sai da parte simétrica (1 - cos) a a^T e o
    sinal vem da parte antissimétrica; em exatamente pi o sinal é arbitrário.
    """
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    skew = vee(R - R.T)
    if theta < 1e-10:
        return 0.5 * skew
    if theta > np.pi - NEAR_PI:
        sym = 0.5 * (R + R.T) - cos_theta * np.eye(3)
        k = int(np.argmax(np.diag(sym)))
        axis = sym[:, k] / np.sqrt(max(sym[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if float(axis @ skew) < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * skew


def _v_coefficients(sigma: float, theta: float) -> Tuple[float, float, float]:
    """V = a I + b W + c W^2 (W = hat(omega)), integral de exp(sigma t) exp(t W) em [0, 1]"""
    a = np.expm1(sigma) / sigma if abs(sigma) > 1e-10 else 1.0 + 0.5 * sigma
    if np.hypot(sigma, theta) < 1e-4:
        b = 0.5 + sigma / 3.0 + sigma**2 / 8.0 - theta**2 / 24.0
        c = 1.0 / 6.0 + sigma / 8.0 + sigma**2 / 20.0 - theta**2 / 120.0
        return a, b, c
    if theta < 1e-6:
        es = np.exp(sigma)
        b = (es * (sigma - 1.0) + 1.0) / sigma**2
        c = (es * (sigma**2 - 2.0 * sigma + 2.0) - 2.0) / sigma**3 / 2.0
        return a, b, c
    z = complex(sigma, theta)
    f = np.expm1(z) / z
    b = f.imag / theta
    c = (a - f.real) / theta**2
    return a, b, c


def v_matrix(omega: np.ndarray, sigma: float = 0.0) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    a, b, c = _v_coefficients(float(sigma), theta)
    W = hat(omega)
    return a * np.eye(3) + b * W + c * W @ W


@dataclass(frozen=True)
class PoseSE3:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidInputError("Pose com valores não finitos")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise InvalidInputError("Rotação não ortonormal")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "PoseSE3":
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def exp(cls, xi: np.ndarray) -> "PoseSE3":
        xi = np.asarray(xi, dtype=np.float64).reshape(6)
        rho, omega = xi[:3], xi[3:]
        return cls(so3_exp(omega), v_matrix(omega) @ rho)

    def log(self) -> np.ndarray:
        omega = so3_log(self.rotation)
        rho = np.linalg.solve(v_matrix(omega), self.translation)
        return np.concatenate([rho, omega])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self ∘ other (aplica other primeiro)"""
        return PoseSE3(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        return self.compose(other)

    def inverse(self) -> "PoseSE3":
        Rt = self.rotation.T
        return PoseSE3(Rt, -Rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def adjoint(self) -> np.ndarray:
        """Ad tal que T exp(xi) T^-1 = exp(Ad xi), ordem (rho, omega)"""
        Ad = np.zeros((6, 6))
        Ad[:3, :3] = self.rotation
        Ad[:3, 3:] = hat(self.translation) @ self.rotation
        Ad[3:, 3:] = self.rotation
        return Ad

    def to_sim3(self, scale: float = 1.0) -> "PoseSim3":
        return PoseSim3(self, scale)

    def angle(self) -> float:
        return float(np.linalg.norm(so3_log(self.rotation)))


@dataclass(frozen=True)
class PoseSim3:
    pose: PoseSE3
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidInputError(f"Escala precisa ser positiva, recebeu {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def rotation(self) -> np.ndarray:
        return self.pose.rotation

    @property
    def translation(self) -> np.ndarray:
        return self.pose.translation

    @classmethod
    def identity(cls) -> "PoseSim3":
        return cls(PoseSE3.identity(), 1.0)

    @classmethod
    def from_parts(cls, rotation: np.ndarray, translation: np.ndarray, scale: float) -> "PoseSim3":
        return cls(PoseSE3(rotation, translation), scale)

    @classmethod
    def exp(cls, xi: np.ndarray) -> "PoseSim3":
        xi = np.asarray(xi, dtype=np.float64).reshape(7)
        rho, omega, sigma = xi[:3], xi[3:6], float(xi[6])
        t = v_matrix(omega, sigma) @ rho
        return cls(PoseSE3(so3_exp(omega), t), float(np.exp(sigma)))

    def log(self) -> np.ndarray:
        sigma = float(np.log(self.scale))
        omega = so3_log(self.rotation)
        rho = np.linalg.solve(v_matrix(omega, sigma), self.translation)
        return np.concatenate([rho, omega, [sigma]])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.scale * self.rotation
        M[:3, 3] = self.translation
        return M

    def compose(self, other: "PoseSim3") -> "PoseSim3":
        return PoseSim3.from_parts(
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
            self.scale * other.scale,
        )

    def __matmul__(self, other: "PoseSim3") -> "PoseSim3":
        return self.compose(other)

    def inverse(self) -> "PoseSim3":
        Rt = self.rotation.T
        return PoseSim3.from_parts(Rt, -Rt @ self.translation / self.scale, 1.0 / self.scale)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(points) @ self.rotation.T) + self.translation

    def adjoint(self) -> np.ndarray:
        """Adjunta 7x7 na ordem (rho, omega, sigma)"""
        Ad = np.zeros((7, 7))
        R, t, s = self.rotation, self.translation, self.scale
        Ad[:3, :3] = s * R
        Ad[:3, 3:6] = hat(t) @ R
        Ad[:3, 6] = -t
        Ad[3:6, 3:6] = R
        Ad[6, 6] = 1.0
        return Ad

    def to_se3(self) -> PoseSE3:
        """Descarta a escala (rotação e translação mantidas)"""
        return self.pose


def so3_log_batch(rotations: np.ndarray) -> np.ndarray:
    """so3_log sobre (n, 3, 3); casos perto de pi caem no caminho escalar"""
    R = np.asarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
    cos_theta = np.clip((np.trace(R, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    skew = np.stack([R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], axis=1)
    small = theta < 1e-10
    factor = np.where(small, 0.5, theta / (2.0 * np.sin(np.where(small, 1.0, theta))))
    out = factor[:, None] * skew
    for i in np.flatnonzero(theta > np.pi - NEAR_PI):
        out[i] = so3_log(R[i])
    return out


def v_matrix_batch(omegas: np.ndarray) -> np.ndarray:
    """V de SE(3) (sigma = 0) para (n, 3) vetores de rotação"""
    w = np.asarray(omegas, dtype=np.float64).reshape(-1, 3)
    theta = np.linalg.norm(w, axis=1)
    small = theta < 1e-4
    th = np.where(small, 1.0, theta)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(th)) / th**2)
    c = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (th - np.sin(th)) / th**3)
    W = np.zeros((w.shape[0], 3, 3))
    W[:, 0, 1], W[:, 0, 2] = -w[:, 2], w[:, 1]
    W[:, 1, 0], W[:, 1, 2] = w[:, 2], -w[:, 0]
    W[:, 2, 0], W[:, 2, 1] = -w[:, 1], w[:, 0]
    return np.eye(3)[None] + b[:, None, None] * W + c[:, None, None] * (W @ W)


def se3_log_batch(rotations: np.ndarray, translations: np.ndarray) -> np.ndarray:
    """log de SE(3) sobre (n, 3, 3) e (n, 3); devolve (n, 6) na ordem (rho, omega)"""
    omega = so3_log_batch(rotations)
    V = v_matrix_batch(omega)
    t = np.asarray(translations, dtype=np.float64).reshape(-1, 3, 1)
    rho = np.linalg.solve(V, t)[..., 0]
    return np.concatenate([rho, omega], axis=1)


def relative_tangents(poses, center: PoseSE3) -> np.ndarray:
    """log(T_i center^-1) para cada pose da lista, formato (n, 6)"""
    Rc_t = center.rotation.T
    R = np.stack([p.rotation for p in poses]) @ Rc_t
    t = np.stack([p.translation for p in poses]) - (R @ center.translation)
    return se3_log_batch(R, t)
