"""Orquestração do EM generalizado de um lote do front-end"""
import logging
import time
from typing import List, Optional
import numpy as np

from app.config import PipelineConfig
from app.errors import InsufficientSupportError, BatchFailureError
from app.geometry.camera import CameraIntrinsics
from app.geometry.lie import PoseSE3
from app.geometry.maps import DepthMap
from app.models.residuals import FiskModel, FiskPriorModel, GaussianUniformMixture, PriorResidualModel
from app.frontend.types import FlowBatch, DepthPrior, PoseEstimate, VoBatchResult
from app.frontend.pose import estimate_pose, bootstrap_pose_essential
from app.frontend.depth import DepthEnergy, depth_update, random_depth
from app.frontend.rigidness import rigidness_update, confidence_map, outlier_epe_density
from app.frontend.priors import prior_inverse_candidate
from app.frontend.visibility import select_stride_and_keyframe


def prior_model(prior: DepthPrior, config: PipelineConfig) -> PriorResidualModel:
    if prior.empirical:
        return FiskPriorModel(FiskModel(config.prior_fisk_alpha, config.prior_fisk_beta, config.density_floor),
                              config.k_u)
    return GaussianUniformMixture(config.k_sigma, config.k_u, config.density_floor)


def deduplicate_priors(priors: List[DepthPrior]) -> List[DepthPrior]:
    """Remove priors idênticos (mesma profundidade e mesma pose)"""
    unique: List[DepthPrior] = []
    for prior in priors:
        if any(p.depth is prior.depth or (
                np.array_equal(p.depth.valid, prior.depth.valid)
                and np.allclose(np.nan_to_num(p.depth.values), np.nan_to_num(prior.depth.values))
                and np.allclose(p.pose.matrix(), prior.pose.matrix())) for p in unique):
            logging.debug(f"Prior {prior.source} duplicado descartado")
            continue
        unique.append(prior)
    return unique


def _initial_depth(priors: List[DepthPrior], K: CameraIntrinsics) -> Optional[DepthMap]:
    """Primeiro prior cobre, os seguintes preenchem buracos"""
    values = np.full(K.shape, np.nan)
    for prior in priors:
        cand = prior_inverse_candidate(prior, K)
        fill = ~np.isfinite(values) & np.isfinite(cand)
        values[fill] = 1.0 / cand[fill]
    if not np.any(np.isfinite(values)):
        return None
    return DepthMap.from_array(values)


def process_batch(batch: FlowBatch, priors: List[DepthPrior], K: CameraIntrinsics, config: PipelineConfig,
                  rng: np.random.Generator, init_depth: Optional[DepthMap] = None,
                  to_latest_keyframe: Optional[PoseSE3] = None) -> VoBatchResult:
    """
    n_em iterações de {pose por frame, profundidade, rigidez}, depois confiança,
    passo e keyframe.

    Sem priors nem profundidade inicial o lote parte da matriz essencial do
    último frame (escala arbitrária) com uma iteração extra.
    """
    started = time.perf_counter()
    priors = deduplicate_priors(list(priors))
    models = [prior_model(p, config) for p in priors]
    fisk = FiskModel(config.fisk_alpha, config.fisk_beta, config.density_floor)
    outlier = outlier_epe_density(K, config.outlier_density)
    flows = np.stack([f.values for f in batch.flows])
    flow_valid = np.stack([f.valid for f in batch.flows])
    frame_ids = list(batch.frame_ids)
    W = flow_valid.astype(np.float64)
    W_hat = [p.w_hat.astype(np.float64) for p in priors]
    candidates = [prior_inverse_candidate(p, K) for p in priors]
    stats = {"sequential_steps": 0, "energies": [], "fallback_covariances": 0, "truncated_at": None}

    depth = init_depth if init_depth is not None else _initial_depth(priors, K)
    bootstrap = depth is None
    scale_known = any(p.source in ("stereo", "rgbd") for p in priors)
    estimates: List[Optional[PoseEstimate]] = [None] * len(frame_ids)

    def run_depth(poses, iteration: int) -> None:
        nonlocal depth
        active = [p.with_rigidness(w) for p, w in zip(priors, W_hat)]
        model = DepthEnergy(flows, flow_valid, poses, W, active, models, K, fisk, config.z_min, config.density_floor,
                            weight_floor=config.depth_weight_floor)
        depth, step_stats = depth_update(model, depth, rng, config.depth_min, config.depth_max, iteration,
                                         config.propagation, config.propagation_stride, config.local_window,
                                         candidates)
        stats["sequential_steps"] += step_stats["sequential_steps"]
        stats["energies"].append(step_stats["energy_after"])

    if bootstrap:
        last = bootstrap_pose_essential(batch.flows[-1], K, rng, config.bootstrap_correspondences,
                                        config.essential_threshold)
        depth = random_depth(K, rng, config.depth_min, config.depth_max)
        poses = [None] * (len(frame_ids) - 1) + [last]
        run_depth(poses, 0)
        logging.info("⚠️ Lote monocular inicial: escala arbitrária")

    for iteration in range(config.n_em):
        for t in range(len(frame_ids)):
            try:
                estimates[t] = estimate_pose(depth, batch.flows[t], W[t], K, config.pose_samples, rng,
                                             config.pose_weight_floor, config.p3p_min_area,
                                             config.meanshift_bandwidth, config.eps_cov,
                                             config.fallback_covariance)
            except InsufficientSupportError as e:
                if t + 1 < 2:
                    raise BatchFailureError(f"Falha de pose no frame {frame_ids[t]}: {e}") from e
                logging.warning(f"⚠️ Lote {batch.reference} truncado no frame {frame_ids[t]}: {e}")
                stats["truncated_at"] = frame_ids[t]
                frame_ids = frame_ids[:t]
                estimates = estimates[:t]
                flows, flow_valid, W = flows[:t], flow_valid[:t], W[:t]
                break
        poses = [e.pose for e in estimates]
        run_depth(poses, iteration)
        W, new_hat = rigidness_update(flows, flow_valid, poses, depth, [p.with_rigidness(w) for p, w in zip(priors, W_hat)],
                                      models, K, fisk, outlier, config.hmm_persistence, iteration, config.z_min)
        W_hat = new_hat
        logging.debug(f"EM {iteration}: energia {stats['energies'][-1]:.4g}, W médio {W.mean():.3f}")

    stats["fallback_covariances"] = sum(1 for e in estimates if e.fallback)
    confidence = confidence_map(list(W), W_hat)
    stride, keyframe, vc = select_stride_and_keyframe(depth, [e.pose for e in estimates], K, config.tau_stride,
                                                      config.tau_keyframe, to_latest_keyframe)
    stats["vc"] = vc
    stats["seconds"] = time.perf_counter() - started
    return VoBatchResult(batch.reference, frame_ids, estimates, depth, W, W_hat, confidence, stride, keyframe,
                         truncated=stats["truncated_at"] is not None, scale_known=scale_known, stats=stats)
