"""Rigidez (passo E): suavização HMM de dois estados ao longo de cadeias 1-D"""
from typing import List, Sequence, Tuple, Union
import numpy as np

from app.errors import InvalidInputError
from app.geometry.camera import CameraIntrinsics, Z_MIN
from app.geometry.lie import PoseSE3
from app.geometry.maps import DepthMap
from app.geometry.transfer import transfer_dense
from app.models.residuals import FiskModel, PriorResidualModel
from app.frontend.types import ConfidenceMap, DepthPrior


def outlier_epe_density(K: CameraIntrinsics, configured: float = 0.0) -> float:
    """Densidade uniforme do EPE no disco de raio igual à diagonal da imagem"""
    if configured > 0:
        return configured
    return 1.0 / (np.pi * K.diagonal**2)


def forward_backward(e_in: np.ndarray, e_out: np.ndarray, persistence: float,
                     prior: Union[float, np.ndarray] = 0.5) -> np.ndarray:
    """
    Marginal posterior do estado inlier em cadeias (n_chains, comprimento).

    Emissões são reescaladas por passo; a transição é simétrica com
    probabilidade `persistence` de manter o estado. `prior` escalar vale para
    o início da cadeia; um mapa com o formato das emissões é uma crença por
    pixel e entra como fator das emissões (pi, 1 - pi).
    """
    e_in = np.asarray(e_in, dtype=np.float64)
    e_out = np.asarray(e_out, dtype=np.float64)
    if np.ndim(prior) > 0:
        pi = np.clip(np.nan_to_num(np.asarray(prior, dtype=np.float64)), 0.0, 1.0)
        e_in, e_out, prior = e_in * pi, e_out * (1.0 - pi), 0.5
    scale = np.maximum(np.maximum(e_in, e_out), 1e-300)
    e_in = e_in / scale
    e_out = e_out / scale
    n, length = e_in.shape
    p, q = persistence, 1.0 - persistence

    fwd = np.empty((n, length))
    a_in, a_out = prior * e_in[:, 0], (1.0 - prior) * e_out[:, 0]
    s = a_in + a_out
    a_in = np.where(s > 0, a_in / np.where(s > 0, s, 1.0), prior)
    a_out = 1.0 - a_in
    fwd[:, 0] = a_in
    for t in range(1, length):
        pred_in = p * a_in + q * a_out
        a_in, a_out = pred_in * e_in[:, t], (1.0 - pred_in) * e_out[:, t]
        s = a_in + a_out
        ok = s > 0
        a_in = np.where(ok, a_in / np.where(ok, s, 1.0), pred_in)
        a_out = 1.0 - a_in
        fwd[:, t] = a_in

    post = np.empty((n, length))
    post[:, -1] = fwd[:, -1]
    b_in = np.ones(n)
    b_out = np.ones(n)
    for t in range(length - 2, -1, -1):
        m_in = e_in[:, t + 1] * b_in
        m_out = e_out[:, t + 1] * b_out
        b_in, b_out = p * m_in + q * m_out, q * m_in + p * m_out
        s = b_in + b_out
        ok = s > 0
        b_in = np.where(ok, b_in / np.where(ok, s, 1.0), 0.5)
        b_out = np.where(ok, b_out / np.where(ok, s, 1.0), 0.5)
        num = fwd[:, t] * b_in
        den = num + (1.0 - fwd[:, t]) * b_out
        post[:, t] = np.where(den > 0, num / np.where(den > 0, den, 1.0), fwd[:, t])
    return post


def smooth_map(e_in: np.ndarray, e_out: np.ndarray, persistence: float, vertical: bool,
               prior: Union[float, np.ndarray] = 0.5) -> np.ndarray:
    """Aplica forward_backward em linhas (ou colunas) de mapas (H, W)"""
    if vertical:
        return forward_backward(e_in.T, e_out.T, persistence, np.transpose(prior)).T
    return forward_backward(e_in, e_out, persistence, prior)


def rigidness_update(flows: np.ndarray, flow_valid: np.ndarray, poses: Sequence[PoseSE3], depth: DepthMap,
                     priors: Sequence[DepthPrior], prior_models: Sequence[PriorResidualModel],
                     K: CameraIntrinsics, fisk: FiskModel, outlier_density: float, persistence: float,
                     iteration: int = 0, z_min: float = Z_MIN) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Novos W_t e W_hat_k.

    Cadeias em linhas nas iterações pares e em colunas nas ímpares. Pixels sem
    evidência (fluxo ou profundidade inválidos, sem consulta ao prior) saem
    com peso 0.
    """
    vertical = iteration % 2 == 1
    u0, v0 = K.pixel_grid()
    W = np.zeros(flows.shape[:3])
    for t, pose in enumerate(poses):
        u, v, _, ok = transfer_dense(depth.values, depth.valid, pose, K, z_min)
        ok &= flow_valid[t]
        flow = np.nan_to_num(flows[t])
        epe = np.hypot(u - (u0 + flow[..., 0]), v - (v0 + flow[..., 1]))
        e_in = np.where(ok, fisk.planar_pdf(np.where(ok, epe, 0.0)), 1.0)
        e_out = np.where(ok, outlier_density, 1.0)
        W[t] = np.where(ok, smooth_map(e_in, e_out, persistence, vertical), 0.0)

    W_hat = []
    for prior, model in zip(priors, prior_models):
        u, v, z, ok = transfer_dense(depth.values, depth.valid, prior.pose, K, z_min)
        lu = np.rint(np.where(ok, u, -1)).astype(np.int64)
        lv = np.rint(np.where(ok, v, -1)).astype(np.int64)
        inside = ok & (lu >= 0) & (lv >= 0) & (lu < K.width) & (lv < K.height)
        lu_c, lv_c = np.clip(lu, 0, K.width - 1), np.clip(lv, 0, K.height - 1)
        hit = inside & prior.depth.valid[lv_c, lu_c]
        prior_inv = np.where(hit, 1.0 / np.where(hit, prior.depth.values[lv_c, lu_c], 1.0), 1.0)
        hyp_inv = np.where(hit, 1.0 / np.where(hit, z, 1.0), 1.0)
        e_in = np.where(hit, model.inlier_density(prior_inv, hyp_inv), 1.0)
        e_out = np.where(hit, model.outlier_density(prior_inv), 1.0)
        # confiança transportada C do prior é a crença inicial de W_hat
        belief = 0.5 if prior.confidence is None else np.clip(prior.confidence, 0.0, 1.0)
        W_hat.append(np.where(hit, smooth_map(e_in, e_out, persistence, vertical, belief), 0.0))
    return W, W_hat


def confidence_map(W: Sequence[np.ndarray], W_hat: Sequence[np.ndarray]) -> ConfidenceMap:
    """C = (soma W_t + soma W_hat_k) / (N_t + N_k)"""
    maps = list(W) + list(W_hat)
    if not maps:
        raise InvalidInputError("confidence_map precisa de ao menos um mapa")
    total = np.zeros_like(np.asarray(maps[0], dtype=np.float64))
    for m in maps:
        total = total + m
    return ConfidenceMap(np.clip(total / len(maps), 0.0, 1.0))
