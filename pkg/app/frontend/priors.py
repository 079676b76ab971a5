"""Construção e transporte de priors de profundidade"""
import logging
from typing import Optional, Tuple
import numpy as np

from app.errors import InvalidInputError
from app.geometry.camera import CameraIntrinsics, Z_MIN
from app.geometry.lie import PoseSE3
from app.geometry.maps import DepthMap, FlowField
from app.geometry.transfer import transfer_dense
from app.frontend.types import DepthPrior


def stereo_flow_to_prior(stereo_flow: FlowField, baseline: float, K: CameraIntrinsics,
                         d_min: float = 0.5) -> DepthPrior:
    """
    Prior estéreo a partir do fluxo esquerda -> direita retificado.

    A disparidade é -dx (o ponto na imagem direita fica à esquerda);
    profundidade = fx * baseline / disparidade, inválida abaixo de d_min.
    """
    if not baseline > 0:
        raise InvalidInputError(f"Baseline precisa ser positiva, recebeu {baseline}")
    disparity = -stereo_flow.values[..., 0]
    valid = stereo_flow.valid & np.isfinite(disparity) & (disparity >= d_min)
    depth = np.where(valid, K.fx * baseline / np.where(valid, disparity, 1.0), np.nan)
    logging.debug(f"Prior estéreo: {valid.mean():.1%} pixels válidos")
    return DepthPrior(DepthMap(depth, valid), PoseSE3.identity(), valid.astype(np.float64), "stereo",
                      empirical=True)


def depth_prior_from_rgbd(depth: np.ndarray) -> DepthPrior:
    """Prior RGB-D no próprio quadro de referência"""
    dm = DepthMap.from_array(depth)
    return DepthPrior(dm, PoseSE3.identity(), dm.valid.astype(np.float64), "rgbd", empirical=True)


def transport_prior_depth(depth: DepthMap, T_src_to_dst: PoseSE3, K: CameraIntrinsics,
                          values: Optional[np.ndarray] = None,
                          z_min: float = Z_MIN) -> Tuple[DepthMap, Optional[np.ndarray]]:
    """
    Splat direto com z-buffer de um mapa de profundidade para outro quadro.

    `values` (mesma grade) é levado junto com o ponto vencedor de cada pixel.
    """
    u, v, z, ok = transfer_dense(depth.values, depth.valid, T_src_to_dst, K, z_min)
    iu = np.rint(np.where(ok, u, -1.0))
    iv = np.rint(np.where(ok, v, -1.0))
    inside = ok & (iu >= 0) & (iv >= 0) & (iu < K.width) & (iv < K.height)
    flat = (iv[inside] * K.width + iu[inside]).astype(np.int64)
    zs = z[inside]
    zbuf = np.full(K.width * K.height, np.inf)
    np.minimum.at(zbuf, flat, zs)
    winner = zs <= zbuf[flat]
    valid = np.isfinite(zbuf)
    out = np.where(valid, zbuf, np.nan).reshape(K.shape)
    moved = None
    if values is not None:
        moved = np.zeros(K.width * K.height)
        moved[flat[winner]] = np.asarray(values)[inside][winner]
        moved = moved.reshape(K.shape)
    return DepthMap(out, valid.reshape(K.shape)), moved


def transported_prior(depth: DepthMap, confidence: Optional[np.ndarray], T_ref_to_prior: PoseSE3,
                      K: CameraIntrinsics, source: str) -> DepthPrior:
    """
    Prior de um quadro anterior (lote anterior ou keyframe).

    A profundidade continua no quadro do prior; a confiança é levada para a
    grade da referência para servir de peso de W_hat.
    """
    moved_depth, moved_conf = transport_prior_depth(depth, T_ref_to_prior.inverse(), K,
                                                    values=confidence if confidence is not None
                                                    else depth.valid.astype(np.float64))
    w_hat = moved_depth.valid.astype(np.float64)
    return DepthPrior(depth, T_ref_to_prior, w_hat, source, confidence=moved_conf)


def prior_inverse_candidate(prior: DepthPrior, K: CameraIntrinsics) -> np.ndarray:
    """Profundidade inversa do prior transportada para a referência (NaN sem splat)"""
    moved, _ = transport_prior_depth(prior.depth, prior.pose.inverse(), K)
    return np.where(moved.valid, 1.0 / np.where(moved.valid, moved.values, 1.0), np.nan)
