"""
Modelos de resíduo.

- FiskModel: log-logística para o erro de ponto final (EPE) do fluxo.
- GaussianUniformMixture: mistura Gauss-uniforme para priors de profundidade
  inversa, com sigma e densidade uniforme proporcionais à profundidade inversa.
- FiskPriorModel: variante empírica para priors externos (estéreo/RGB-D).

Todas as densidades passam por um piso antes de qualquer log.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence
import numpy as np
from scipy import stats

from app.errors import InvalidInputError
from app.geometry.camera import CameraIntrinsics, Z_MIN
from app.geometry.lie import PoseSE3
from app.geometry.maps import DepthMap
from app.geometry.transfer import transfer_point

DENSITY_FLOOR = 1e-12


def _check_nonnegative(residual) -> np.ndarray:
    r = np.asarray(residual, dtype=np.float64)
    if np.any(r < 0):
        raise InvalidInputError("Resíduo negativo")
    return r


@dataclass(frozen=True)
class FiskModel:
    alpha: float
    beta: float
    floor: float = DENSITY_FLOOR

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.beta > 0):
            raise InvalidInputError(f"Fisk precisa de alpha, beta > 0: ({self.alpha}, {self.beta})")

    def pdf(self, residual):
        r = _check_nonnegative(residual)
        return stats.fisk.pdf(r, self.beta, scale=self.alpha)

    def cdf(self, residual):
        r = _check_nonnegative(residual)
        return stats.fisk.cdf(r, self.beta, scale=self.alpha)

    def nll(self, residual):
        return -np.log(np.maximum(self.pdf(residual), self.floor))

    def mode(self) -> float:
        if self.beta <= 1:
            return 0.0
        return self.alpha * ((self.beta - 1.0) / (self.beta + 1.0)) ** (1.0 / self.beta)

    def planar_pdf(self, residual):
        """
        Densidade do vetor de erro 2-D cujo módulo segue Fisk: pdf(r) / (2 pi r).

        Em r = 0 vale beta / (2 pi alpha^2) para beta = 2; o resíduo é limitado
        por baixo em floor * alpha.
        """
        r = np.maximum(_check_nonnegative(residual), self.floor * self.alpha)
        x = r / self.alpha
        return self.beta / (2.0 * np.pi * self.alpha**2) * x ** (self.beta - 2.0) / (1.0 + x**self.beta) ** 2

    def planar_nll(self, residual):
        return -np.log(np.maximum(self.planar_pdf(residual), self.floor))

    @classmethod
    def fit(cls, residuals) -> "FiskModel":
        """Máxima verossimilhança com localização fixa em 0"""
        r = np.asarray(residuals, dtype=np.float64).ravel()
        r = r[np.isfinite(r) & (r > 0)]
        if r.size < 2:
            raise InvalidInputError("Resíduos insuficientes para ajustar o modelo Fisk")
        beta, _, alpha = stats.fisk.fit(r, floc=0)
        logging.debug(f"Fisk ajustado: alpha={alpha:.4g}, beta={beta:.4g} ({r.size} resíduos)")
        return cls(float(alpha), float(beta))


def fisk_nll(residual, model: FiskModel):
    return model.nll(residual)


class PriorResidualModel(Protocol):
    def inlier_density(self, prior_inv: np.ndarray, hyp_inv: np.ndarray) -> np.ndarray: ...
    def outlier_density(self, prior_inv: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class GaussianUniformMixture:
    k_sigma: float = 0.05
    k_u: float = 0.5
    floor: float = DENSITY_FLOOR

    def __post_init__(self) -> None:
        if not (self.k_sigma > 0 and self.k_u > 0):
            raise InvalidInputError("k_sigma e k_u precisam ser positivos")

    def sigma(self, prior_inv):
        return self.k_sigma * np.asarray(prior_inv, dtype=np.float64)

    def uniform(self, prior_inv):
        return self.k_u * np.asarray(prior_inv, dtype=np.float64)

    def inlier_density(self, prior_inv, hyp_inv):
        sigma = self.sigma(prior_inv)
        r = np.asarray(prior_inv) - np.asarray(hyp_inv)
        return np.exp(-0.5 * (r / sigma) ** 2) / (np.sqrt(2.0 * np.pi) * sigma)

    def outlier_density(self, prior_inv):
        return self.uniform(prior_inv)


@dataclass(frozen=True)
class FiskPriorModel:
    """Resíduo de profundidade inversa |1/theta_hat - 1/phi_z| com módulo Fisk"""
    fisk: FiskModel
    k_u: float = 0.5

    def inlier_density(self, prior_inv, hyp_inv):
        r = np.abs(np.asarray(prior_inv) - np.asarray(hyp_inv))
        return self.fisk.pdf(r)

    def outlier_density(self, prior_inv):
        return self.k_u * np.asarray(prior_inv, dtype=np.float64)


def depth_prior_likelihood(theta_j: float, prior_depth: float, w_hat: int, T_hat: PoseSE3,
                           mix: PriorResidualModel, pixel, K: CameraIntrinsics) -> float:
    """P(theta_hat^l | theta^j, W_hat^j; T_hat) no pixel j"""
    if not (theta_j > 0 and prior_depth > 0):
        raise InvalidInputError("Profundidades precisam ser positivas")
    prior_inv = 1.0 / prior_depth
    if not w_hat:
        return float(mix.outlier_density(prior_inv))
    phi_z = transfer_point(theta_j, pixel, T_hat, K)[2]
    if phi_z <= Z_MIN:
        return 0.0
    return float(mix.inlier_density(prior_inv, 1.0 / phi_z))


def rigidness_responsibility(likelihood_inlier, likelihood_outlier, prior_w):
    """Posterior de inlier; com as duas densidades nulas devolve o próprio prior"""
    l_in = np.asarray(likelihood_inlier, dtype=np.float64)
    l_out = np.asarray(likelihood_outlier, dtype=np.float64)
    w = np.asarray(prior_w, dtype=np.float64)
    num = w * l_in
    den = num + (1.0 - w) * l_out
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(den > 0, num / np.where(den > 0, den, 1.0), w)
    return q if q.ndim else float(q)


def prior_energy_terms(prior_inv: np.ndarray, hyp_inv: np.ndarray, q: np.ndarray,
                       mix: PriorResidualModel, floor: float = DENSITY_FLOOR) -> np.ndarray:
    """-q log(G / (G + U)) elemento a elemento; q = 0 anula o termo"""
    g = np.maximum(mix.inlier_density(prior_inv, hyp_inv), floor)
    u = np.maximum(mix.outlier_density(prior_inv), floor)
    return -q * np.log(g / (g + u))


class PriorLike(Protocol):
    depth: DepthMap
    pose: PoseSE3
    w_hat: np.ndarray
    confidence: Optional[np.ndarray]


def geom_prior_energy(theta_j: float, pixel, priors: Sequence[PriorLike], mix: PriorResidualModel,
                      K: CameraIntrinsics, models: Optional[Sequence[PriorResidualModel]] = None) -> float:
    """
    Energia dos priors geométricos para uma hipótese theta_j no pixel j.

    q = C^j * W_hat^j; priors sem consulta válida (fora da imagem, atrás da
    câmera ou profundidade inválida) contribuem zero.
    """
    u, v = int(pixel[0]), int(pixel[1])
    energy = 0.0
    for k, prior in enumerate(priors):
        model = models[k] if models is not None else mix
        q = float(prior.w_hat[v, u])
        if prior.confidence is not None:
            q *= float(prior.confidence[v, u])
        if q <= 0:
            continue
        point = transfer_point(theta_j, (u, v), prior.pose, K)
        if point[2] <= Z_MIN:
            continue
        lu = int(np.rint(K.fx * point[0] / point[2] + K.cx))
        lv = int(np.rint(K.fy * point[1] / point[2] + K.cy))
        if not (0 <= lu < K.width and 0 <= lv < K.height) or not prior.depth.valid[lv, lu]:
            continue
        prior_inv = 1.0 / prior.depth.values[lv, lu]
        energy += float(prior_energy_terms(prior_inv, 1.0 / point[2], q, model))
    return energy
