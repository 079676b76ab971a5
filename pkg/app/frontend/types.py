from dataclasses import dataclass, field
from typing import List, Optional, Dict, Any
import numpy as np

from app.errors import InvalidInputError
from app.geometry.lie import PoseSE3
from app.geometry.maps import DepthMap, FlowField

PRIOR_SOURCES = ("previous-batch", "keyframe", "stereo", "rgbd")


@dataclass(frozen=True)
class FlowBatch:
    """Lote de fluxos da referência para os frames t = 1..N_t"""
    reference: int
    frame_ids: List[int]
    flows: List[FlowField]
    images: Optional[List[np.ndarray]] = None
    stereo_flow: Optional[FlowField] = None
    rgbd_depth: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if len(self.flows) < 2:
            raise InvalidInputError(f"Lote precisa de N_t >= 2 fluxos, recebeu {len(self.flows)}")
        if len(self.frame_ids) != len(self.flows):
            raise InvalidInputError("frame_ids e flows com tamanhos diferentes")
        shape = self.flows[0].shape
        if any(f.shape != shape for f in self.flows):
            raise InvalidInputError("Fluxos do lote com resoluções diferentes")
        if self.images is not None and len(self.images) != len(self.flows) + 1:
            raise InvalidInputError("images precisa da referência mais um quadro por fluxo")

    @property
    def size(self) -> int:
        return len(self.flows)

    @property
    def shape(self):
        return self.flows[0].shape


@dataclass(frozen=True)
class DepthPrior:
    """
    Prior de profundidade explícito.

    pose leva pontos da câmera de referência para a câmera do prior.
    w_hat e confidence vivem na grade da referência.
    """
    depth: DepthMap
    pose: PoseSE3
    w_hat: np.ndarray
    source: str
    confidence: Optional[np.ndarray] = None
    empirical: bool = False

    def __post_init__(self) -> None:
        if self.source not in PRIOR_SOURCES:
            raise InvalidInputError(f"Origem de prior desconhecida: {self.source}")
        if self.w_hat.shape != self.depth.shape:
            raise InvalidInputError("w_hat com formato diferente da profundidade")

    def with_rigidness(self, w_hat: np.ndarray) -> "DepthPrior":
        return DepthPrior(self.depth, self.pose, w_hat, self.source, self.confidence, self.empirical)


@dataclass(frozen=True)
class ConfidenceMap:
    values: np.ndarray

    def __post_init__(self) -> None:
        if np.any((self.values < 0) | (self.values > 1)):
            raise InvalidInputError("Confiança fora de [0, 1]")


@dataclass(frozen=True)
class PoseEstimate:
    """Pose (referência -> frame t) com covariância 6x6 no tangente (rho, omega)"""
    pose: PoseSE3
    covariance: np.ndarray
    fallback: bool = False


@dataclass
class VoBatchResult:
    reference: int
    frame_ids: List[int]
    poses: List[PoseEstimate]
    depth: DepthMap
    rigidness: np.ndarray
    prior_rigidness: List[np.ndarray]
    confidence: ConfidenceMap
    stride: int = 1
    keyframe: bool = False
    truncated: bool = False
    scale_known: bool = True
    stats: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.poses)
        if n == 0 or len(self.frame_ids) != n or self.rigidness.shape[0] != n:
            raise InvalidInputError("Resultado de lote com dimensões inconsistentes")
        if not 1 <= self.stride <= n:
            raise InvalidInputError(f"stride {self.stride} fora de [1, {n}]")
