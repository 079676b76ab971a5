"""Motores de recuperação de candidatos a fechamento de laço"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Protocol, Sequence, Tuple
import numpy as np
import cv2

from app.geometry.lie import PoseSE3

DESCRIPTOR_ASPECT = 0.75


def global_descriptor(image: np.ndarray, size: int = 16) -> np.ndarray:
    """Grade de intensidade reduzida (size x 0.75 size), média zero e norma unitária"""
    height = max(2, int(round(size * DESCRIPTOR_ASPECT)))
    small = cv2.resize(np.asarray(image, dtype=np.float32), (size, height), interpolation=cv2.INTER_AREA)
    vec = small.astype(np.float64).ravel()
    vec -= vec.mean()
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


@dataclass(frozen=True)
class RetrievalQuery:
    index: int
    descriptor: Optional[np.ndarray] = None
    frame: Optional[int] = None


class Retriever(Protocol):
    def query(self, query: RetrievalQuery, database: Sequence[RetrievalQuery]) -> List[Tuple[int, float]]:
        ...


def _key(entry: RetrievalQuery) -> int:
    return entry.index if entry.frame is None else entry.frame


def _non_recent(query: RetrievalQuery, database: Sequence[RetrievalQuery], recency_gap: int):
    return [entry for entry in database if abs(query.index - entry.index) > recency_gap]


class DescriptorRetriever:
    """Similaridade de cosseno entre assinaturas globais"""

    def __init__(self, min_score: float = 0.5, top_k: int = 3, recency_gap: int = 20):
        self.min_score = min_score
        self.top_k = top_k
        self.recency_gap = recency_gap

    def query(self, query: RetrievalQuery, database: Sequence[RetrievalQuery]) -> List[Tuple[int, float]]:
        if query.descriptor is None:
            raise ValueError(f"Keyframe {query.index} sem assinatura global")
        scored = []
        for entry in _non_recent(query, database, self.recency_gap):
            if entry.descriptor is None:
                continue
            score = float(np.dot(query.descriptor, entry.descriptor))
            if score >= self.min_score:
                scored.append((entry.index, score))
        scored.sort(key=lambda item: (-item[1], item[0]))
        return scored[:self.top_k]


class OracleRetriever:
    """Propõe keyframes próximos pelas poses verdadeiras, indexadas por frame (ou por índice sem frame)"""

    def __init__(self, ground_truth: Dict[int, PoseSE3], max_distance: float = 1.0, max_angle: float = 0.5,
                 top_k: int = 3, recency_gap: int = 20):
        self.ground_truth = ground_truth
        self.max_distance = max_distance
        self.max_angle = max_angle
        self.top_k = top_k
        self.recency_gap = recency_gap

    def query(self, query: RetrievalQuery, database: Sequence[RetrievalQuery]) -> List[Tuple[int, float]]:
        ref = self.ground_truth.get(_key(query))
        if ref is None:
            raise KeyError(f"Sem pose verdadeira para o keyframe {query.index}")
        scored = []
        for entry in _non_recent(query, database, self.recency_gap):
            pose = self.ground_truth.get(_key(entry))
            if pose is None:
                continue
            rel = ref.inverse() @ pose
            distance = float(np.linalg.norm(rel.translation))
            if distance <= self.max_distance and rel.angle() <= self.max_angle:
                scored.append((entry.index, -distance))
        scored.sort(key=lambda item: (-item[1], item[0]))
        return scored[:self.top_k]


def retrieve(retriever: Optional[Retriever], query: RetrievalQuery,
             database: Sequence[RetrievalQuery]) -> List[Tuple[int, float]]:
    """Falhas do motor viram lista vazia (registradas em log)"""
    if retriever is None:
        return []
    try:
        return retriever.query(query, database)
    except Exception as e:
        logging.warning(f"⚠️ Recuperação falhou para o keyframe {query.index}: {e}")
        return []
