"""Mapas densos por pixel: profundidade, fluxo e normais"""
from dataclasses import dataclass, field
from typing import Optional
import numpy as np

from app.errors import InvalidInputError


@dataclass(frozen=True)
class DepthMap:
    """Profundidade Z (m) por pixel, com máscara de validade"""
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or valid.shape != values.shape:
            raise InvalidInputError(f"DepthMap precisa ser (H, W), recebeu {values.shape}/{valid.shape}")
        good = np.isfinite(values) & (values > 0)
        if np.any(valid & ~good):
            raise InvalidInputError("DepthMap com profundidade válida não positiva ou não finita")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, values: np.ndarray, valid: Optional[np.ndarray] = None) -> "DepthMap":
        values = np.asarray(values, dtype=np.float64)
        good = np.isfinite(values) & (values > 0)
        mask = good if valid is None else (np.asarray(valid, dtype=bool) & good)
        return cls(np.where(mask, values, np.nan), mask)

    @property
    def shape(self):
        return self.values.shape

    def inverse(self) -> np.ndarray:
        """Profundidade inversa, 0 fora da máscara"""
        out = np.zeros_like(self.values)
        out[self.valid] = 1.0 / self.values[self.valid]
        return out


@dataclass(frozen=True)
class FlowField:
    """
    Deslocamento (dx, dy) em pixels, formato (H, W, 2).

    `sentinel` guarda os valores originais lidos do arquivo para que os pixels
    inválidos sejam regravados sem alteração.
    """
    values: np.ndarray
    valid: np.ndarray
    sentinel: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 3 or values.shape[2] != 2 or valid.shape != values.shape[:2]:
            raise InvalidInputError(f"FlowField precisa ser (H, W, 2), recebeu {values.shape}")
        if np.any(valid & ~np.all(np.isfinite(values), axis=-1)):
            raise InvalidInputError("FlowField com valores não finitos em pixels válidos")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, values: np.ndarray, valid: Optional[np.ndarray] = None) -> "FlowField":
        values = np.asarray(values, dtype=np.float64)
        good = np.all(np.isfinite(values), axis=-1)
        mask = good if valid is None else (np.asarray(valid, dtype=bool) & good)
        return cls(np.where(mask[..., None], values, np.nan), mask)

    @property
    def shape(self):
        return self.values.shape[:2]


@dataclass(frozen=True)
class NormalMap:
    """Normais unitárias no referencial da câmera, (H, W, 3)"""
    values: np.ndarray
    valid: np.ndarray
