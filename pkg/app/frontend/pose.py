"""
Posterior de pose por amostragem Monte-Carlo de instâncias P3P.

Amostras -> moda por meanshift no tangente se(3) -> covariância robusta.
"""
import logging
from typing import List, Tuple
import numpy as np
import cv2
from scipy import stats

from app.errors import InsufficientSupportError
from app.geometry.camera import CameraIntrinsics, backproject
from app.geometry.lie import PoseSE3, relative_tangents
from app.geometry.maps import DepthMap, FlowField
from app.frontend.types import PoseEstimate

BANDWIDTH = np.full(6, 0.1)
MIN_COV_SAMPLES = 7
TRIM_QUANTILE = 0.9973


def _usable_points(depth: DepthMap, flow: FlowField, W: np.ndarray, K: CameraIntrinsics,
                   weight_floor: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    usable = depth.valid & flow.valid & (W > weight_floor)
    idx = np.flatnonzero(usable)
    if idx.size < 3:
        raise InsufficientSupportError(f"Apenas {idx.size} pixels utilizáveis para P3P")
    u, v = K.pixel_grid()
    pixels = np.stack([u.ravel()[idx], v.ravel()[idx]], axis=1)
    centered = pixels - pixels.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv.size < 2 or sv[1] <= 1e-6 * max(sv[0], 1.0):
        raise InsufficientSupportError("Pixels utilizáveis colineares")
    objects = backproject(np.where(depth.valid, depth.values, 1.0), K).reshape(-1, 3)[idx]
    observed = pixels + flow.values.reshape(-1, 2)[idx]
    weights = W.ravel()[idx].astype(np.float64)
    return objects, observed, weights / weights.sum(), pixels


def _solve_p3p(obj: np.ndarray, img: np.ndarray, check_obj: np.ndarray, check_img: np.ndarray,
               Kmat: np.ndarray):
    try:
        n, rvecs, tvecs = cv2.solveP3P(obj, img, Kmat, None, flags=cv2.SOLVEPNP_AP3P)
    except cv2.error:
        return None
    best, best_err = None, np.inf
    for k in range(int(n)):
        R, _ = cv2.Rodrigues(rvecs[k])
        t = tvecs[k].reshape(3)
        q = R @ check_obj + t
        if q[2] <= 0 or np.any((obj @ R.T + t)[:, 2] <= 0):
            continue
        proj = Kmat[:2, :2] @ (q[:2] / q[2]) + Kmat[:2, 2]
        err = float(np.linalg.norm(proj - check_img))
        if err < best_err:
            best, best_err = (R, t), err
    return best


def sample_pose_p3p(depth: DepthMap, flow_t: FlowField, W_t: np.ndarray, K: CameraIntrinsics, S: int,
                    rng: np.random.Generator, weight_floor: float = 0.0,
                    min_area: float = 4.0) -> List[PoseSE3]:
    """
    S poses de instâncias P3P com pixels sorteados proporcionalmente a W.

    Trincas com área de triângulo abaixo de min_area (px^2) são sorteadas de
    novo; um quarto pixel escolhe entre as soluções do P3P.
    """
    if S < 1:
        raise InsufficientSupportError("S precisa ser >= 1")
    objects, observed, p, pixels = _usable_points(depth, flow_t, W_t, K, weight_floor)
    Kmat = K.matrix
    samples: List[PoseSE3] = []
    for _ in range(50):
        need = S - len(samples)
        if need <= 0:
            break
        draws = rng.choice(objects.shape[0], size=(2 * need + 8, 4), p=p)
        a, b, c = pixels[draws[:, 0]], pixels[draws[:, 1]], pixels[draws[:, 2]]
        area = 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
        distinct = (draws[:, 0] != draws[:, 1]) & (draws[:, 1] != draws[:, 2]) & (draws[:, 0] != draws[:, 2])
        for row in draws[distinct & (area >= min_area)]:
            sol = _solve_p3p(objects[row[:3]], observed[row[:3]], objects[row[3]], observed[row[3]], Kmat)
            if sol is None:
                continue
            samples.append(PoseSE3(sol[0], sol[1]))
            if len(samples) >= S:
                break
    if not samples:
        raise InsufficientSupportError("Nenhuma instância P3P resolvida")
    if len(samples) < S:
        logging.debug(f"P3P: {len(samples)} de {S} amostras resolvidas")
    return samples


def pose_mode_meanshift(samples: List[PoseSE3], bandwidth: np.ndarray = BANDWIDTH,
                        max_iterations: int = 100, tol: float = 1e-8, n_candidates: int = 64) -> PoseSE3:
    """Moda local da densidade das amostras com núcleo gaussiano no tangente"""
    if len(samples) == 1:
        return samples[0]
    bw = np.asarray(bandwidth, dtype=np.float64)
    # partida: amostra de maior densidade entre candidatas
    chart = relative_tangents(samples, samples[0]) / bw
    step = max(1, len(samples) // n_candidates)
    candidates = chart[::step]
    d2 = ((candidates[:, None, :] - chart[None, :, :]) ** 2).sum(axis=-1)
    center = samples[int(np.argmax(np.exp(-0.5 * d2).sum(axis=1))) * step]

    for iteration in range(max_iterations):
        xi = relative_tangents(samples, center)
        k = np.exp(-0.5 * ((xi / bw) ** 2).sum(axis=1))
        if k.sum() <= 0:
            break
        shift = (k[:, None] * xi).sum(axis=0) / k.sum()
        center = PoseSE3.exp(shift) @ center
        if np.linalg.norm(shift) < tol:
            break
    logging.debug(f"Meanshift: {iteration + 1} iterações")
    return center


def _clamp(cov: np.ndarray, eps: float) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    return (V * np.maximum(w, eps)) @ V.T


def pose_covariance_fit(samples: List[PoseSE3], mode: PoseSE3, eps_cov: float = 1e-8,
                        fallback: float = 1e-2, max_rounds: int = 10) -> Tuple[np.ndarray, bool]:
    """
    Covariância dos resíduos tangentes ao redor da moda.

    Inicialização robusta por meia-amostra (passos de concentração), depois
    corte no quantil 3-sigma do chi2 com 6 graus até ponto fixo. Com menos de
    7 amostras sobreviventes devolve fallback * I e a flag True.
    """
    dim = 6
    if len(samples) < MIN_COV_SAMPLES:
        return np.eye(dim) * fallback, True
    e = relative_tangents(samples, mode)
    n = e.shape[0]
    h = (n + dim + 1) // 2
    cutoff = stats.chi2.ppf(TRIM_QUANTILE, dim)

    scale = np.maximum(np.median(np.abs(e), axis=0), eps_cov)
    subset = np.argsort(((e / scale) ** 2).sum(axis=1))[:h]
    for _ in range(5):
        cov = _clamp(e[subset].T @ e[subset] / subset.size, eps_cov)
        d2 = np.einsum("ij,jk,ik->i", e, np.linalg.inv(cov), e)
        new = np.argsort(d2)[:h]
        if set(new.tolist()) == set(subset.tolist()):
            break
        subset = new
    # consistência da meia-amostra sob normalidade
    frac = h / n
    consistency = frac / stats.chi2.cdf(stats.chi2.ppf(frac, dim), dim + 2)
    cov = _clamp(cov * consistency, eps_cov)

    kept = None
    truncation = stats.chi2.cdf(cutoff, dim + 2) / stats.chi2.cdf(cutoff, dim)
    for _ in range(max_rounds):
        d2 = np.einsum("ij,jk,ik->i", e, np.linalg.inv(cov), e)
        mask = d2 <= cutoff
        if mask.sum() < MIN_COV_SAMPLES:
            logging.debug(f"Covariância: {mask.sum()} amostras após o corte, usando fallback")
            return np.eye(dim) * fallback, True
        cov = _clamp(e[mask].T @ e[mask] / mask.sum() / truncation, eps_cov)
        if kept is not None and np.array_equal(mask, kept):
            break
        kept = mask
    return cov, False


def estimate_pose(depth: DepthMap, flow_t: FlowField, W_t: np.ndarray, K: CameraIntrinsics, S: int,
                  rng: np.random.Generator, weight_floor: float, min_area: float,
                  bandwidth_scale: float, eps_cov: float, fallback: float) -> PoseEstimate:
    """Atualização de pose de um frame: amostragem, moda e covariância"""
    samples = sample_pose_p3p(depth, flow_t, W_t, K, S, rng, weight_floor, min_area)
    mode = pose_mode_meanshift(samples, BANDWIDTH * bandwidth_scale)
    cov, flagged = pose_covariance_fit(samples, mode, eps_cov, fallback)
    return PoseEstimate(mode, cov, flagged)


def bootstrap_pose_essential(flow: FlowField, K: CameraIntrinsics, rng: np.random.Generator,
                             n_points: int = 2000, threshold: float = 1.0) -> PoseSE3:
    """Pose relativa com translação unitária pela matriz essencial (partida monocular)"""
    idx = np.flatnonzero(flow.valid)
    if idx.size < 8:
        raise InsufficientSupportError("Fluxo válido insuficiente para a matriz essencial")
    if idx.size > n_points:
        idx = rng.choice(idx, size=n_points, replace=False)
    u, v = K.pixel_grid()
    pts1 = np.stack([u.ravel()[idx], v.ravel()[idx]], axis=1)
    pts2 = pts1 + flow.values.reshape(-1, 2)[idx]
    if np.median(np.linalg.norm(pts2 - pts1, axis=1)) < 1e-3:
        raise InsufficientSupportError("Sem paralaxe para a matriz essencial")
    cv2.setRNGSeed(int(rng.integers(0, 2**31 - 1)))
    E, mask = cv2.findEssentialMat(pts1, pts2, K.matrix, method=cv2.RANSAC, prob=0.999, threshold=threshold)
    if E is None or E.shape[0] < 3:
        raise InsufficientSupportError("Matriz essencial não encontrada")
    inliers, R, t, _ = cv2.recoverPose(E[:3], pts1, pts2, K.matrix, mask=mask)
    if inliers < 8:
        raise InsufficientSupportError(f"Apenas {inliers} inliers na recuperação de pose")
    logging.info(f"Partida monocular: {inliers} inliers na matriz essencial")
    return PoseSE3(R, t.reshape(3) / np.linalg.norm(t))
