"""
Atualização de profundidade (passo M) por amostragem e propagação em cadeias.

A energia por pixel soma o NLL Fisk planar do EPE ponderado por W_t em cada
frame do lote e a energia dos priors geométricos com q = C * W_hat. A
profundidade é parametrizada por profundidade inversa durante a busca.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence
import numpy as np

from app.geometry.camera import CameraIntrinsics, Z_MIN, bilinear_sample
from app.geometry.lie import PoseSE3
from app.geometry.maps import DepthMap
from app.models.residuals import FiskModel, PriorResidualModel, prior_energy_terms
from app.frontend.types import DepthPrior


class DepthEnergy:
    """E_of + E_gp avaliável em subconjuntos de pixels para hipóteses de profundidade inversa"""

    def __init__(self, flows: np.ndarray, flow_valid: np.ndarray, poses: Sequence[Optional[PoseSE3]],
                 W: np.ndarray, priors: Sequence[DepthPrior], prior_models: Sequence[PriorResidualModel],
                 K: CameraIntrinsics, fisk: FiskModel, z_min: float = Z_MIN,
                 floor: float = 1e-12, weight_floor: float = 0.0) -> None:
        self.K = K
        self.fisk = fisk
        self.z_min = z_min
        self.floor = floor
        u, v = K.pixel_grid()
        self.u = u.ravel()
        self.v = v.ravel()
        rays = np.stack([(self.u - K.cx) / K.fx, (self.v - K.cy) / K.fy, np.ones_like(self.u)], axis=1)

        # frames sem pose ou sem peso ficam fora da soma; rigidez abaixo de
        # weight_floor não informa a profundidade, que vem então dos vizinhos
        self.frames = []
        observed = np.zeros(self.u.shape, dtype=bool)
        for t, pose in enumerate(poses):
            if pose is None:
                continue
            observed |= flow_valid[t].ravel()
            weight = np.where(flow_valid[t] & (W[t] >= weight_floor), W[t], 0.0).ravel()
            if not np.any(weight > 0):
                continue
            target = np.stack([self.u, self.v], axis=1) + np.nan_to_num(flows[t].reshape(-1, 2))
            self.frames.append((rays @ pose.rotation.T, pose.translation, target, weight))

        self.priors = []
        for prior, model in zip(priors, prior_models):
            q = prior.w_hat if prior.confidence is None else prior.w_hat * prior.confidence
            q = np.nan_to_num(q).ravel()
            if not np.any(q > 0):
                continue
            self.priors.append((rays @ prior.pose.rotation.T, prior.pose.translation, prior.depth, q, model))

        for prior in self.priors:
            observed |= prior[3] > 0
        self.observed = observed

    def evaluate(self, inv: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Energia por pixel; inf para hipóteses inadmissíveis"""
        inv = np.asarray(inv, dtype=np.float64)
        ok = np.isfinite(inv) & (inv > 0)
        safe = np.where(ok, inv, 1.0)
        energy = np.zeros(inv.shape)
        K = self.K
        for rays_rot, trans, target, weight in self.frames:
            # q * inv = R r + t * inv, mesmo sinal de Z
            qs = rays_rot[idx] + safe[:, None] * trans
            z = qs[:, 2]
            w = weight[idx]
            front = z > self.z_min * safe
            zs = np.where(front, z, 1.0)
            pu = K.fx * qs[:, 0] / zs + K.cx
            pv = K.fy * qs[:, 1] / zs + K.cy
            epe = np.hypot(pu - target[idx, 0], pv - target[idx, 1])
            term = np.where(w > 0, w * self.fisk.planar_nll(epe), 0.0)
            energy += term
            ok &= front | (w <= 0)
        for rays_rot, trans, depth, q, model in self.priors:
            qs = rays_rot[idx] + safe[:, None] * trans
            z = qs[:, 2]
            front = z > self.z_min * safe
            zs = np.where(front, z, 1.0)
            lu = np.rint(K.fx * qs[:, 0] / zs + K.cx).astype(np.int64)
            lv = np.rint(K.fy * qs[:, 1] / zs + K.cy).astype(np.int64)
            inside = front & (lu >= 0) & (lv >= 0) & (lu < K.width) & (lv < K.height)
            lu_c = np.clip(lu, 0, K.width - 1)
            lv_c = np.clip(lv, 0, K.height - 1)
            hit = inside & depth.valid[lv_c, lu_c]
            qi = np.where(hit, q[idx], 0.0)
            prior_inv = np.where(hit, 1.0 / np.where(hit, depth.values[lv_c, lu_c], 1.0), 1.0)
            hyp_inv = np.where(front, safe / np.where(front, z, 1.0), 1.0)
            energy += np.where(qi > 0, prior_energy_terms(prior_inv, hyp_inv, qi, model, self.floor), 0.0)
        return np.where(ok, energy, np.inf)

    def total(self, inv_map: np.ndarray, valid: np.ndarray) -> float:
        idx = np.flatnonzero(valid)
        if idx.size == 0:
            return 0.0
        e = self.evaluate(inv_map.ravel()[idx], idx)
        return float(e[np.isfinite(e)].sum())


@dataclass
class SearchRange:
    inv_min: float
    inv_max: float
    perturbation: float

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.inv_min, self.inv_max, size=n)

    def perturb(self, rng: np.random.Generator, inv: np.ndarray) -> np.ndarray:
        out = inv * np.exp(self.perturbation * rng.standard_normal(inv.shape))
        return np.clip(out, self.inv_min, self.inv_max)


def sweep_proposals(cur: np.ndarray, search: SearchRange, rng: np.random.Generator) -> List[np.ndarray]:
    """Dois sorteios uniformes de profundidade inversa mais uma perturbação log-normal do valor atual"""
    base = np.where(np.isfinite(cur), cur, search.uniform(rng, cur.size))
    return [search.uniform(rng, cur.size), search.uniform(rng, cur.size), search.perturb(rng, base)]


def _sweep(chains: np.ndarray, inv: np.ndarray, energy: np.ndarray, model: DepthEnergy,
           search: SearchRange, rng: np.random.Generator) -> int:
    """
    Uma varredura sequencial ao longo das cadeias (linhas de chains), todas
    em paralelo. Candidatos: valor atual, dois sorteios uniformes, perturbação
    local e o valor propagado do vizinho anterior, que também vence empates.
    Devolve o número de passos.
    """
    n_chains, length = chains.shape
    for s in range(length):
        idx = chains[:, s]
        live = idx >= 0
        if not np.any(live):
            continue
        cur_idx = idx[live]
        cur = inv[cur_idx]
        best_inv = cur.copy()
        best_e = energy[cur_idx].copy()
        for cand in sweep_proposals(cur, search, rng):
            e = model.evaluate(cand, cur_idx)
            better = e < best_e
            best_inv[better] = cand[better]
            best_e[better] = e[better]
        if s > 0:
            prev = chains[live, s - 1]
            has_prev = prev >= 0
            neighbor = np.full(cur.size, np.nan)
            neighbor[has_prev] = inv[prev[has_prev]]
            e = model.evaluate(neighbor, cur_idx)
            # empate com o vizinho propaga: pixels sem evidência herdam a superfície ao redor
            better = (e < best_e) | ((e == best_e) & np.isfinite(e))
            best_inv[better] = neighbor[better]
            best_e[better] = e[better]
        inv[cur_idx] = best_inv
        energy[cur_idx] = best_e
    return length


def _window_chains(height: int, width: int, window: int, vertical: bool) -> np.ndarray:
    """Cadeias restritas a janelas window x window, com -1 como preenchimento"""
    grid = np.arange(height * width).reshape(height, width)
    if vertical:
        grid = grid.T
    rows, cols = grid.shape
    n_blocks = (cols + window - 1) // window
    padded = np.full((rows, n_blocks * window), -1, dtype=np.int64)
    padded[:, :cols] = grid
    return padded.reshape(rows, n_blocks, window).reshape(rows * n_blocks, window)


def _oriented_sweeps(chains_h: np.ndarray, chains_v: np.ndarray, iteration: int):
    first, second = (chains_h, chains_v) if iteration % 2 == 0 else (chains_v, chains_h)
    return [first, first[:, ::-1], second, second[:, ::-1]]


def depth_update(model: DepthEnergy, current: DepthMap, rng: np.random.Generator, depth_min: float,
                 depth_max: float, iteration: int = 0, scheme: str = "hierarchical", stride: int = 4,
                 window: int = 16, prior_candidates: Optional[List[np.ndarray]] = None) -> tuple:
    """
    Escolhe, por pixel, a hipótese de menor E_of + E_gp entre os candidatos.

    hierarchical: propagação global na sub-grade de passo `stride`, subida
    bilinear da profundidade inversa e propagação local em janelas de
    `window` pixels na resolução cheia. global: cadeias de linha/coluna
    inteiras na resolução cheia.

    Returns:
        (DepthMap, stats) com energia total antes/depois e passos sequenciais
    """
    K = model.K
    height, width = K.height, K.width
    inv = np.where(current.valid, 1.0 / np.where(current.valid, current.values, 1.0), np.nan).ravel()
    all_idx = np.arange(inv.size)
    energy = model.evaluate(inv, all_idx)
    energy_before = float(energy[np.isfinite(energy) & current.valid.ravel()].sum())
    search = SearchRange(1.0 / depth_max, 1.0 / depth_min, max(0.3 * 0.5 ** iteration, 0.002))

    for cand in prior_candidates or []:
        c = cand.ravel()
        e = model.evaluate(c, all_idx)
        better = e < energy
        inv[better], energy[better] = c[better], e[better]

    steps = 0
    if scheme == "hierarchical" and stride > 1:
        sub = np.arange(inv.size).reshape(height, width)[::stride, ::stride]
        for chains in _oriented_sweeps(sub, sub.T, iteration):
            steps += _sweep(chains, inv, energy, model, search, rng)
        small = inv.reshape(height, width)[::stride, ::stride]
        ok_small = np.isfinite(small)
        u, v = K.pixel_grid()
        up, up_ok = bilinear_sample(np.nan_to_num(small), u / stride, v / stride, ok_small)
        up = np.where(up_ok, up, np.nan).ravel()
        e = model.evaluate(up, all_idx)
        better = e < energy
        inv[better], energy[better] = up[better], e[better]
        search.perturbation = max(search.perturbation * 0.5, 0.002)
        for chains in _oriented_sweeps(_window_chains(height, width, window, False),
                                       _window_chains(height, width, window, True), iteration):
            steps += _sweep(chains, inv, energy, model, search, rng)
    else:
        grid = np.arange(inv.size).reshape(height, width)
        for chains in _oriented_sweeps(grid, grid.T, iteration):
            steps += _sweep(chains, inv, energy, model, search, rng)

    valid = np.isfinite(inv) & np.isfinite(energy) & (inv > 0) & model.observed
    depth = np.where(valid, 1.0 / np.where(valid, inv, 1.0), np.nan).reshape(height, width)
    energy_after = float(energy[valid].sum())
    logging.debug(f"depth_update[{scheme}] energia {energy_before:.4g} -> {energy_after:.4g}, "
                  f"{steps} passos sequenciais")
    stats: Dict[str, float] = {"energy_before": energy_before, "energy_after": energy_after,
                               "sequential_steps": steps}
    return DepthMap(depth, valid.reshape(height, width)), stats


def random_depth(K: CameraIntrinsics, rng: np.random.Generator, depth_min: float, depth_max: float) -> DepthMap:
    """Inicialização monocular: sorteios uniformes em profundidade inversa"""
    inv = rng.uniform(1.0 / depth_max, 1.0 / depth_min, size=K.shape)
    return DepthMap(1.0 / inv, np.ones(K.shape, dtype=bool))
