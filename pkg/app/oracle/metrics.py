"""Métricas de trajetória (ATE, RPE, completude) e de profundidade por limiar de confiança"""
import logging
from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Sequence, Tuple
import numpy as np

from app.errors import InsufficientDataError, InvalidInputError
from app.geometry.camera import CameraIntrinsics
from app.geometry.lie import PoseSE3
from app.geometry.maps import DepthMap

COMPLETENESS_FOR_ROTATION = 0.8
TIMESTAMP_TOLERANCE = 1e-6


@dataclass(frozen=True)
class TrajectoryMetrics:
    ate_rmse: float
    rpe_translation: Optional[float]
    rpe_rotation: Optional[float]
    completeness: float
    matched: int
    alignment: str
    scale: float = 1.0

    def as_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class DepthQuality:
    threshold: float
    density: float
    inlier_rate: float
    epe: float


def umeyama_alignment(source: np.ndarray, target: np.ndarray, with_scale: bool = True) -> Tuple[np.ndarray, np.ndarray, float]:
    """(R, t, s) que minimiza sum ||target - (s R source + t)||^2"""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    xs, xt = source - mu_s, target - mu_t
    sigma = xt.T @ xs / source.shape[0]
    U, D, Vt = np.linalg.svd(sigma)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_s = np.mean(np.sum(xs**2, axis=1))
    s = float(np.trace(np.diag(D) @ S) / var_s) if with_scale and var_s > 0 else 1.0
    t = mu_t - s * R @ mu_s
    return R, t, s


def match_by_timestamp(estimated: Tuple[Sequence[float], Sequence[PoseSE3]],
                       ground_truth: Tuple[Sequence[float], Sequence[PoseSE3]]) -> List[Tuple[PoseSE3, PoseSE3]]:
    est_times, est_poses = estimated
    gt_times, gt_poses = ground_truth
    gt_array = np.asarray(gt_times, dtype=np.float64)
    pairs = []
    for t, pose in zip(est_times, est_poses):
        if gt_array.size == 0:
            break
        k = int(np.argmin(np.abs(gt_array - t)))
        if abs(gt_array[k] - t) <= TIMESTAMP_TOLERANCE * max(1.0, abs(t)):
            pairs.append((pose, gt_poses[k]))
    return pairs


def _rpe(est: List[PoseSE3], gt: List[PoseSE3], lengths: Sequence[float]) -> Tuple[Optional[float], Optional[float]]:
    """Protocolo KITTI: erro relativo por comprimento de subsequência, média sobre todas"""
    positions = np.array([p.translation for p in gt])
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    distance = np.concatenate([[0.0], np.cumsum(steps)])
    t_errors, r_errors = [], []
    for first in range(len(gt)):
        for length in lengths:
            last = int(np.searchsorted(distance, distance[first] + length))
            if last >= len(gt):
                continue
            gt_rel = gt[first].inverse() @ gt[last]
            est_rel = est[first].inverse() @ est[last]
            error = gt_rel.inverse() @ est_rel
            t_errors.append(np.linalg.norm(error.translation) / length)
            r_errors.append(np.degrees(error.angle()) / length)
    if not t_errors:
        return None, None
    return 100.0 * float(np.mean(t_errors)), float(np.mean(r_errors))


def evaluate_trajectory(estimated: Tuple[Sequence[float], Sequence[PoseSE3]],
                        ground_truth: Tuple[Sequence[float], Sequence[PoseSE3]],
                        alignment: str = "sim3", lengths: Sequence[float] = (2, 4, 6, 8, 10, 12, 14, 16)
                        ) -> TrajectoryMetrics:
    """
    ATE após alinhamento de mínimos quadrados, RPE (% e graus/m) e completude.

    Rotação do RPE fica ausente quando a completude é menor que 0.8.
    """
    if alignment not in ("se3", "sim3"):
        raise InvalidInputError(f"Alinhamento desconhecido: {alignment}")
    pairs = match_by_timestamp(estimated, ground_truth)
    if len(pairs) < 2:
        raise InsufficientDataError(f"Apenas {len(pairs)} pose(s) pareada(s); são necessárias >= 2")
    est = [p for p, _ in pairs]
    gt = [g for _, g in pairs]
    P = np.array([p.translation for p in est])
    G = np.array([g.translation for g in gt])
    R, t, s = umeyama_alignment(P, G, with_scale=alignment == "sim3")
    aligned = [PoseSE3(R @ p.rotation, s * R @ p.translation + t) for p in est]
    residual = np.array([a.translation for a in aligned]) - G
    ate = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
    completeness = len(pairs) / max(len(ground_truth[0]), 1)
    rpe_t, rpe_r = _rpe(aligned, gt, lengths)
    if completeness < COMPLETENESS_FOR_ROTATION:
        rpe_r = None
    metrics = TrajectoryMetrics(ate, rpe_t, rpe_r, min(completeness, 1.0), len(pairs), alignment, s)
    logging.debug(f"Métricas: {metrics}")
    return metrics


def evaluate_depth(depth: DepthMap, confidence: np.ndarray, ground_truth: DepthMap, K: CameraIntrinsics,
                   baseline: float, thresholds: Sequence[float] = (0.0, 0.5, 0.9, 0.99),
                   pixel_threshold: float = 3.0, relative_threshold: float = 0.05) -> List[DepthQuality]:
    """
    Por limiar de confiança: densidade (fração dos pixels com verdade) e taxa
    de inliers (EPE de disparidade < pixel_threshold ou < relative_threshold
    da disparidade verdadeira). Os 3 px padrão valem para imagens de ~1242 px
    de largura; resoluções menores pedem um limiar proporcional.
    """
    if not baseline > 0:
        raise InvalidInputError("Baseline precisa ser positiva para avaliar disparidade")
    gt_valid = ground_truth.valid
    both = gt_valid & depth.valid
    d_gt = K.fx * baseline / np.where(gt_valid, ground_truth.values, 1.0)
    d_est = K.fx * baseline / np.where(depth.valid, depth.values, 1.0)
    error = np.abs(d_est - d_gt)
    inlier = (error < pixel_threshold) | (error < relative_threshold * d_gt)
    total = max(int(gt_valid.sum()), 1)
    out = []
    conf = np.nan_to_num(confidence)
    for threshold in thresholds:
        mask = both & (conf >= threshold)
        n = int(mask.sum())
        out.append(DepthQuality(
            threshold=float(threshold),
            density=n / total,
            inlier_rate=float(inlier[mask].mean()) if n else 0.0,
            epe=float(error[mask].mean()) if n else float("nan"),
        ))
    return out
