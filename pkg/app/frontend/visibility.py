"""Score de visibilidade-cobertura (VC), passo do lote e decisão de keyframe"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple
import numpy as np

from app.geometry.camera import CameraIntrinsics, Z_MIN
from app.geometry.lie import PoseSE3
from app.geometry.maps import DepthMap
from app.geometry.transfer import transfer_dense


@dataclass(frozen=True)
class VcScore:
    visibility: float
    coverage: float
    vc: float


def harmonic_vc(visibility: float, coverage: float) -> float:
    if visibility <= 0 or coverage <= 0:
        return 0.0
    return 2.0 / (1.0 / visibility + 1.0 / coverage)


def vc_score(depth: DepthMap, T_12: PoseSE3, K: CameraIntrinsics, z_min: float = Z_MIN) -> VcScore:
    """
    visibility: fração dos pixels válidos de I1 que caem dentro de I2.
    coverage: fração da grade de I2 atingida por ao menos uma projeção (pixel
    mais próximo).
    """
    n_valid = int(depth.valid.sum())
    if n_valid == 0:
        return VcScore(0.0, 0.0, 0.0)
    u, v, _, ok = transfer_dense(depth.values, depth.valid, T_12, K, z_min)
    iu = np.rint(np.where(ok, u, -1.0))
    iv = np.rint(np.where(ok, v, -1.0))
    inside = ok & (iu >= 0) & (iv >= 0) & (iu < K.width) & (iv < K.height)
    visibility = float(inside.sum()) / n_valid
    covered = np.zeros(K.shape, dtype=bool)
    covered[iv[inside].astype(np.int64), iu[inside].astype(np.int64)] = True
    coverage = float(covered.sum()) / covered.size
    return VcScore(visibility, coverage, harmonic_vc(visibility, coverage))


def select_stride_and_keyframe(depth: DepthMap, poses: Sequence[PoseSE3], K: CameraIntrinsics,
                               tau_stride: float, tau_keyframe: float,
                               to_latest_keyframe: Optional[PoseSE3]) -> Tuple[int, bool, list]:
    """
    Passo = índice (1-based) do primeiro frame com VC(ref, t) < tau_stride,
    senão N_t. Keyframe quando não há keyframe ou VC(ref, keyframe) < tau_keyframe.
    """
    scores = [vc_score(depth, pose, K).vc for pose in poses]
    stride = len(poses)
    for t, vc in enumerate(scores, start=1):
        if vc < tau_stride:
            stride = t
            break
    if to_latest_keyframe is None:
        keyframe = True
    else:
        keyframe = vc_score(depth, to_latest_keyframe, K).vc < tau_keyframe
    return stride, keyframe, scores
