"""Matriz de prioridade de ligação entre keyframes (camada de tempo real + camadas de laço)"""
import logging
from typing import List, Optional, Tuple
import numpy as np

SIDE_CONDITIONS = ("endpoint", "paired")


def update_realtime_priorities(kappa: int, sigma_spatial: float, sigma_temporal: float) -> np.ndarray:
    """
    Camada de tempo real para o keyframe mais novo kappa:
    Q[i, j] = exp(-(i-j)^2 / s_spatial^2 - (kappa-i)(kappa-j) / s_temporal^2), diagonal nula.
    """
    n = kappa + 1
    idx = np.arange(n, dtype=np.float64)
    i, j = idx[:, None], idx[None, :]
    Q = np.exp(-((i - j) ** 2) / sigma_spatial**2 - (kappa - i) * (kappa - j) / sigma_temporal**2)
    np.fill_diagonal(Q, 0.0)
    return np.clip(Q, 0.0, 1.0)


def update_loop_priorities(n: int, loop: Tuple[int, int], sigma_lc: float,
                           side_condition: str = "endpoint") -> np.ndarray:
    """
    Camada de um fechamento de laço (kappa, kappa').

    endpoint: Q[i, j] = exp(-(|i-kappa| + |j-kappa'|)^2 / s_lc^2) onde |i-kappa| <= |j-kappa|;
    paired: usa a orientação do par mais próxima de (kappa, kappa').
    Ambas simetrizadas.
    """
    kappa, kappa_p = loop
    idx = np.arange(n, dtype=np.float64)
    i, j = idx[:, None], idx[None, :]
    forward = np.exp(-((np.abs(i - kappa) + np.abs(j - kappa_p)) ** 2) / sigma_lc**2)
    if side_condition == "endpoint":
        layer = np.where(np.abs(i - kappa) <= np.abs(j - kappa), forward, 0.0)
    else:
        layer = forward
    layer = np.maximum(layer, layer.T)
    np.fill_diagonal(layer, 0.0)
    return layer


class PriorityMatrix:
    """Q densa sobre pares de keyframes com máscara de pares já ligados"""

    def __init__(self, sigma_spatial: float = 3.0, sigma_temporal: float = 10.0, sigma_lc: float = 3.0,
                 side_condition: str = "endpoint"):
        if side_condition not in SIDE_CONDITIONS:
            raise ValueError(f"Condição de lado desconhecida: {side_condition}")
        self.sigma_spatial = sigma_spatial
        self.sigma_temporal = sigma_temporal
        self.sigma_lc = sigma_lc
        self.side_condition = side_condition
        self.size = 0
        self.loops: List[Tuple[int, int]] = []
        self.linked = np.zeros((0, 0), dtype=bool)

    def add_keyframe(self) -> int:
        """Aumenta a matriz e devolve o novo kappa"""
        grown = np.zeros((self.size + 1, self.size + 1), dtype=bool)
        grown[:self.size, :self.size] = self.linked
        self.linked = grown
        self.size += 1
        return self.size - 1

    def add_loop(self, kappa: int, kappa_p: int) -> None:
        self.loops.append((kappa, kappa_p))
        logging.debug(f"Camada de laço ({kappa}, {kappa_p}) adicionada")

    def mark_linked(self, i: int, j: int) -> None:
        self.linked[i, j] = self.linked[j, i] = True

    def layers(self) -> List[np.ndarray]:
        if self.size == 0:
            return []
        out = [update_realtime_priorities(self.size - 1, self.sigma_spatial, self.sigma_temporal)]
        out += [update_loop_priorities(self.size, loop, self.sigma_lc, self.side_condition) for loop in self.loops]
        return out

    def combined(self) -> np.ndarray:
        """Máximo elemento a elemento de todas as camadas"""
        layers = self.layers()
        if not layers:
            return np.zeros((0, 0))
        return np.maximum.reduce(layers)

    def next_link(self, tau_link: float) -> Optional[Tuple[int, int]]:
        """Maior par não ligado acima de tau_link; o par devolvido fica marcado"""
        if self.size < 2:
            return None
        Q = np.where(self.linked, -1.0, self.combined())
        Q = np.triu(Q, k=1) - np.tril(np.ones_like(Q))
        flat = int(np.argmax(Q))
        i, j = divmod(flat, self.size)
        if Q[i, j] <= tau_link:
            return None
        self.mark_linked(i, j)
        return i, j


def next_link(priority: PriorityMatrix, tau_link: float) -> Optional[Tuple[int, int]]:
    return priority.next_link(tau_link)
