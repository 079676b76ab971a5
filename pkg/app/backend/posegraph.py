"""
Otimização de grafo de poses sim(3).

Nós guardam poses câmera -> mundo S_k; uma aresta (i, j) restringe
Z_ij ~ S_i^-1 S_j. Resíduo e_ij = log(Z_ij^-1 S_i^-1 S_j), perturbação à
direita S_k <- S_k exp(delta), Gauss-Newton amortecido com sistema esparso.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple
import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from app.errors import InvalidInputError
from app.geometry.lie import PoseSim3

EDGE_TYPES = ("odometry", "realtime-link", "loop-closure")
DIM = 7
NUMERIC_STEP = 1e-6


@dataclass(frozen=True)
class PoseGraphEdge:
    i: int
    j: int
    constraint: PoseSim3
    information: np.ndarray
    kind: str = "odometry"

    def __post_init__(self) -> None:
        if self.i == self.j:
            raise InvalidInputError(f"Aresta com extremos iguais ({self.i})")
        if self.kind not in EDGE_TYPES:
            raise InvalidInputError(f"Tipo de aresta desconhecido: {self.kind}")
        info = np.asarray(self.information, dtype=np.float64)
        if info.shape != (DIM, DIM):
            raise InvalidInputError(f"Informação precisa ser 7x7, recebeu {info.shape}")
        object.__setattr__(self, "information", 0.5 * (info + info.T))

    @property
    def pair(self) -> Tuple[int, int]:
        return (min(self.i, self.j), max(self.i, self.j))


@dataclass
class PoseGraphResult:
    poses: Dict[int, PoseSim3]
    cost_before: float
    cost_after: float
    iterations: int
    components: int
    converged: bool
    costs: List[float] = field(default_factory=list)
    stalled: bool = False

    @property
    def flagged(self) -> bool:
        return self.components > 1


def edge_residual(edge: PoseGraphEdge, Si: PoseSim3, Sj: PoseSim3) -> np.ndarray:
    return (edge.constraint.inverse() @ Si.inverse() @ Sj).log()


def graph_cost(poses: Dict[int, PoseSim3], edges: Sequence[PoseGraphEdge]) -> float:
    total = 0.0
    for edge in edges:
        e = edge_residual(edge, poses[edge.i], poses[edge.j])
        total += float(e @ edge.information @ e)
    return total


def _edge_jacobians(edge: PoseGraphEdge, Si: PoseSim3, Sj: PoseSim3) -> Tuple[np.ndarray, np.ndarray]:
    """Diferenças centrais com passo NUMERIC_STEP"""
    Ji = np.zeros((DIM, DIM))
    Jj = np.zeros((DIM, DIM))
    for k in range(DIM):
        d = np.zeros(DIM)
        d[k] = NUMERIC_STEP
        plus, minus = PoseSim3.exp(d), PoseSim3.exp(-d)
        Ji[:, k] = (edge_residual(edge, Si @ plus, Sj) - edge_residual(edge, Si @ minus, Sj)) / (2 * NUMERIC_STEP)
        Jj[:, k] = (edge_residual(edge, Si, Sj @ plus) - edge_residual(edge, Si, Sj @ minus)) / (2 * NUMERIC_STEP)
    return Ji, Jj


def graph_components(nodes: Sequence[int], edges: Sequence[PoseGraphEdge]) -> List[List[int]]:
    """Componentes conexas, cada uma ordenada por índice de nó"""
    order = sorted(nodes)
    position = {k: n for n, k in enumerate(order)}
    rows = [position[e.i] for e in edges]
    cols = [position[e.j] for e in edges]
    adjacency = sparse.coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(len(order), len(order)))
    count, labels = connected_components(adjacency, directed=False)
    groups: List[List[int]] = [[] for _ in range(count)]
    for node, label in zip(order, labels):
        groups[label].append(node)
    return sorted(groups, key=lambda g: g[0])


def _linear_system(poses, edges, column):
    rows, cols, vals = [], [], []
    g = np.zeros(len(column) * DIM)
    blocks = {}
    for edge in edges:
        Si, Sj = poses[edge.i], poses[edge.j]
        e = edge_residual(edge, Si, Sj)
        Ji, Jj = _edge_jacobians(edge, Si, Sj)
        L = edge.information
        for a, Ja in ((edge.i, Ji), (edge.j, Jj)):
            if a not in column:
                continue
            g[column[a] * DIM:(column[a] + 1) * DIM] += Ja.T @ L @ e
            for b, Jb in ((edge.i, Ji), (edge.j, Jj)):
                if b not in column:
                    continue
                key = (column[a], column[b])
                blocks[key] = blocks.get(key, 0.0) + Ja.T @ L @ Jb
    for (a, b), block in blocks.items():
        r, c = np.meshgrid(np.arange(DIM) + a * DIM, np.arange(DIM) + b * DIM, indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.asarray(block).ravel())
    n = len(column) * DIM
    H = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return H, g


def optimize_pose_graph(poses: Dict[int, PoseSim3], edges: Sequence[PoseGraphEdge],
                        max_iterations: int = 100, step_tol: float = 1e-8) -> PoseGraphResult:
    """
    Minimiza sum ||log(Z^-1 S_i^-1 S_j)||^2_Lambda com o primeiro nó de cada
    componente conexa fixo. Passos que aumentam o custo são rejeitados.
    """
    poses = dict(poses)
    edges = [e for e in edges if e.i in poses and e.j in poses]
    components = graph_components(list(poses), edges)
    if len(components) > 1:
        logging.warning(f"⚠️ Grafo com {len(components)} componentes; cada uma fixa seu primeiro nó")
    fixed = {group[0] for group in components}
    free = [k for k in sorted(poses) if k not in fixed]
    column = {k: n for n, k in enumerate(free)}

    cost = graph_cost(poses, edges)
    costs = [cost]
    cost_before = cost
    if not free or not edges:
        return PoseGraphResult(poses, cost, cost, 0, len(components), True, costs)

    mu = 1e-6
    converged = stalled = False
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        H, g = _linear_system(poses, edges, column)
        diag = H.diagonal()
        accepted = False
        predicted = np.inf
        for attempt in range(20):
            damped = H + sparse.diags(mu * np.maximum(diag, 1e-12), format="csc")
            step = np.atleast_1d(spsolve(damped, -g))
            if not np.all(np.isfinite(step)):
                mu *= 10.0
                continue
            if attempt == 0:
                # redução prevista pelo modelo quadrático
                predicted = -0.5 * float(g @ step)
            trial = dict(poses)
            for k, n in column.items():
                trial[k] = poses[k] @ PoseSim3.exp(step[n * DIM:(n + 1) * DIM])
            trial_cost = graph_cost(trial, edges)
            if trial_cost <= cost:
                poses, cost = trial, trial_cost
                mu = max(mu / 10.0, 1e-12)
                accepted = True
                break
            mu *= 10.0
        costs.append(cost)
        logging.debug(f"Grafo {iteration}: custo {cost:.6g}, |passo| {np.linalg.norm(step):.3g}")
        if not accepted and predicted <= 1e-12 * max(cost, 1e-300):
            # no piso numérico: não há redução observável
            converged = True
            break
        if not accepted:
            stalled = True
            logging.warning(f"⚠️ Grafo de poses travou na iteração {iteration} com custo {cost:.4g}")
            break
        if np.linalg.norm(step) < step_tol or cost == 0.0:
            converged = True
            break
    logging.info(f"📊 Grafo de poses: custo {cost_before:.4g} -> {cost:.4g} em {iteration} iterações")
    return PoseGraphResult(poses, cost_before, cost, iteration, len(components), converged, costs, stalled)
