"""
Levenberg-Marquardt coarse-to-fine sobre (T, s, a2, b2).

Cada nível da pirâmide reassocia os pixels a cada avaliação. A covariância
final é a inversa da matriz de informação branqueada no nível mais fino,
marginalizada nos parâmetros fotométricos.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple
import numpy as np

from app.config import PipelineConfig
from app.errors import EmptyOverlapError, NonConvergenceError, RejectedLinkError
from app.geometry.lie import PoseSE3, PoseSim3
from app.alignment.energy import (
    AlignmentLevel, AlignmentProblem, CauchyKernel, N_PARAMS, Terms,
    geometric_terms, photometric_terms,
)

MU_INIT = 1e-4
MU_MIN = 1e-12


@dataclass(frozen=True)
class AlignmentSettings:
    energy: str = "point-to-plane"
    cauchy_geo: float = 0.05
    cauchy_photo: float = 0.1
    overlap_min: float = 0.3
    pyramid_levels: int = 3
    max_iterations: int = 100
    step_tol: float = 1e-8
    max_boosts: int = 10
    geo_noise: float = 0.005
    photo_noise: float = 0.05

    @classmethod
    def from_config(cls, config: PipelineConfig) -> "AlignmentSettings":
        return cls(
            energy=config.alignment_energy,
            cauchy_geo=config.cauchy_geo,
            cauchy_photo=config.cauchy_photo,
            overlap_min=config.overlap_min,
            pyramid_levels=config.pyramid_levels,
            max_iterations=config.align_max_iterations,
            step_tol=config.align_step_tol,
            max_boosts=config.lm_max_boosts,
            geo_noise=config.geo_noise,
            photo_noise=config.photo_noise,
        )


@dataclass
class AlignmentResult:
    pose: PoseSE3
    scale: float
    covariance: np.ndarray
    inlier_ratio: float
    iterations: int
    converged: bool
    photometric: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    energy: float = 0.0
    overlap: float = 0.0
    level_iterations: List[int] = field(default_factory=list)
    n_terms: int = 0

    @property
    def energy_per_term(self) -> float:
        """Energia média por resíduo válido; comparável entre sobreposições diferentes"""
        return self.energy / self.n_terms if self.n_terms > 0 else np.inf

    def relative_sim3(self) -> PoseSim3:
        """Sim(3) que leva pontos da fonte para a unidade da profundidade alvo"""
        return PoseSim3.from_parts(self.pose.rotation, self.pose.translation / self.scale, 1.0 / self.scale)

    def as_dict(self) -> Dict:
        return {
            "rotation": self.pose.rotation.tolist(),
            "translation": self.pose.translation.tolist(),
            "scale": self.scale,
            "covariance": self.covariance.tolist(),
            "inlier_ratio": self.inlier_ratio,
            "iterations": self.iterations,
            "converged": self.converged,
            "photometric": list(self.photometric),
            "energy": self.energy,
            "overlap": self.overlap,
        }


@dataclass
class _State:
    pose: PoseSE3
    sigma: float
    a2: float = 0.0
    b2: float = 0.0

    @property
    def scale(self) -> float:
        return float(np.exp(self.sigma))

    def retract(self, delta: np.ndarray) -> "_State":
        return _State(PoseSE3.exp(delta[:6]) @ self.pose, self.sigma + delta[6],
                      self.a2 + delta[7], self.b2 + delta[8])


def build_pyramid(problem: AlignmentProblem, levels: int) -> List[AlignmentLevel]:
    """Nível 0 é a resolução cheia; nível l usa passo 2^l"""
    pyramid = []
    for level in range(levels):
        stride = 2**level
        if min(problem.K.shape) // stride < 8:
            break
        pyramid.append(AlignmentLevel.build(problem, stride))
    return pyramid


def _active(problem: AlignmentProblem, photometric: bool) -> np.ndarray:
    mask = np.zeros(N_PARAMS, dtype=bool)
    mask[:6] = True
    mask[6] = problem.estimate_scale
    mask[7:] = photometric
    return mask


class _Objective:
    """E_geo + lambda E_photo num nível, com sistema normal IRLS"""

    def __init__(self, level: AlignmentLevel, settings: AlignmentSettings, photometric: bool, weight: float):
        self.level = level
        self.settings = settings
        self.photometric = photometric
        self.weight = weight
        self.geo_kernel = CauchyKernel(settings.cauchy_geo)
        self.photo_kernel = CauchyKernel(settings.cauchy_photo)

    def terms(self, state: _State, jacobian: bool) -> Tuple[Terms, Optional[Terms]]:
        geo = geometric_terms(self.level, state.pose, state.scale, self.settings.energy, jacobian)
        if geo.residuals.size == 0:
            raise EmptyOverlapError("Nenhum pixel associado durante o alinhamento")
        photo = photometric_terms(self.level, state.pose, state.a2, state.b2, jacobian) if self.photometric else None
        return geo, photo

    def energy(self, geo: Terms, photo: Optional[Terms]) -> float:
        value = float(np.sum(geo.confidence * self.geo_kernel.rho(geo.residuals)))
        if photo is not None and photo.residuals.size:
            value += self.weight * float(np.sum(photo.confidence * self.photo_kernel.rho(photo.residuals)))
        return value

    def normal_equations(self, geo: Terms, photo: Optional[Terms]) -> Tuple[np.ndarray, np.ndarray]:
        w = geo.confidence * self.geo_kernel.weight(geo.residuals)
        H = geo.jacobian.T @ (w[:, None] * geo.jacobian)
        g = geo.jacobian.T @ (w * geo.residuals)
        if photo is not None and photo.residuals.size:
            wp = self.weight * photo.confidence * self.photo_kernel.weight(photo.residuals)
            H += photo.jacobian.T @ (wp[:, None] * photo.jacobian)
            g += photo.jacobian.T @ (wp * photo.residuals)
        return H, g

    def information(self, geo: Terms, photo: Optional[Terms]) -> np.ndarray:
        """J^T W J com resíduos branqueados pelo ruído esperado de cada termo"""
        w = geo.confidence * self.geo_kernel.weight(geo.residuals) / self.settings.geo_noise**2
        H = geo.jacobian.T @ (w[:, None] * geo.jacobian)
        if photo is not None and photo.residuals.size:
            wp = photo.confidence * self.photo_kernel.weight(photo.residuals) / self.settings.photo_noise**2
            H += photo.jacobian.T @ (wp[:, None] * photo.jacobian)
        return H


def _levenberg_marquardt(objective: _Objective, state: _State, active: np.ndarray,
                         settings: AlignmentSettings) -> Tuple[_State, int, bool]:
    mu = MU_INIT
    geo, photo = objective.terms(state, jacobian=True)
    energy = objective.energy(geo, photo)
    for iteration in range(1, settings.max_iterations + 1):
        H, g = objective.normal_equations(geo, photo)
        H, g = H[np.ix_(active, active)], g[active]
        boosts = 0
        while True:
            damped = H + mu * np.diag(np.maximum(np.diag(H), 1e-12))
            try:
                step = np.linalg.solve(damped, -g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(damped, -g, rcond=None)[0]
            delta = np.zeros(N_PARAMS)
            delta[active] = step
            candidate = state.retract(delta)
            try:
                new_geo, new_photo = objective.terms(candidate, jacobian=True)
                new_energy = objective.energy(new_geo, new_photo)
            except EmptyOverlapError:
                new_energy = np.inf
            if new_energy <= energy:
                state, geo, photo, energy = candidate, new_geo, new_photo, new_energy
                mu = max(mu / 3.0, MU_MIN)
                break
            if np.linalg.norm(step) < settings.step_tol:
                return state, iteration, True
            boosts += 1
            if boosts >= settings.max_boosts:
                raise NonConvergenceError(
                    f"Energia subiu após {boosts} aumentos de amortecimento (iteração {iteration})")
            mu *= 4.0
        if np.linalg.norm(step) < settings.step_tol:
            return state, iteration, True
    return state, settings.max_iterations, False


def overlap_fraction(level: AlignmentLevel, pose: PoseSE3, scale: float) -> float:
    """Fração dos pixels fonte usáveis que caem em profundidade alvo válida"""
    if level.points.shape[0] == 0:
        return 0.0
    terms = geometric_terms(level, pose, scale, "inverse-depth", jacobian=False)
    return terms.residuals.size / level.points.shape[0]


def align(problem: AlignmentProblem, settings: Optional[AlignmentSettings] = None) -> AlignmentResult:
    """
    Registrar a profundidade fonte na alvo (mínimo local de E_geo + lambda E_photo).

    Levanta RejectedLinkError se a sobreposição inicial fica abaixo de
    overlap_min e NonConvergenceError se o LM diverge.
    """
    settings = settings or AlignmentSettings()
    pyramid = build_pyramid(problem, settings.pyramid_levels)
    photometric = problem.use_photometric and problem.has_images and problem.weight > 0
    state = _State(problem.init_pose, float(np.log(problem.init_scale)) if problem.estimate_scale else 0.0)

    overlap = overlap_fraction(pyramid[0], state.pose, state.scale)
    if overlap < settings.overlap_min:
        raise RejectedLinkError(f"Sobreposição {overlap:.1%} abaixo de {settings.overlap_min:.0%}")

    active = _active(problem, photometric)
    level_iterations = []
    converged = False
    for level in reversed(pyramid):
        objective = _Objective(level, settings, photometric, problem.weight)
        state, iterations, converged = _levenberg_marquardt(objective, state, active, settings)
        level_iterations.append(iterations)

    objective = _Objective(pyramid[0], settings, photometric, problem.weight)
    geo, photo = objective.terms(state, jacobian=True)
    info = objective.information(geo, photo)[np.ix_(active, active)]
    covariance = np.linalg.pinv(info)
    n_pose = 7 if problem.estimate_scale else 6
    covariance = covariance[:n_pose, :n_pose]
    covariance = 0.5 * (covariance + covariance.T)
    inliers = float(np.mean(np.abs(geo.residuals) < settings.cauchy_geo))
    result = AlignmentResult(
        pose=state.pose,
        scale=state.scale if problem.estimate_scale else 1.0,
        covariance=covariance,
        inlier_ratio=inliers,
        iterations=int(sum(level_iterations)),
        converged=converged,
        photometric=(0.0, state.a2, 0.0, state.b2),
        energy=objective.energy(geo, photo),
        overlap=overlap,
        level_iterations=level_iterations,
        n_terms=int(geo.residuals.size),
    )
    logging.debug(f"Alinhamento: {result.iterations} iterações {level_iterations}, "
                  f"inliers {inliers:.1%}, s={result.scale:.4f}")
    return result


def align_multi(problem: AlignmentProblem, initial_poses: Sequence[PoseSE3],
                settings: Optional[AlignmentSettings] = None) -> AlignmentResult:
    """Várias inicializações; vence a menor energia média por resíduo válido"""
    best: Optional[AlignmentResult] = None
    best_score = np.inf
    errors: List[Exception] = []
    for init in initial_poses:
        candidate = replace(problem, init_pose=init)
        try:
            result = align(candidate, settings)
        except (RejectedLinkError, NonConvergenceError, EmptyOverlapError) as e:
            errors.append(e)
            continue
        if best is None or result.energy_per_term < best_score:
            best, best_score = result, result.energy_per_term
    if best is None:
        if errors:
            raise errors[-1]
        raise RejectedLinkError("Nenhuma hipótese inicial fornecida")
    return best
