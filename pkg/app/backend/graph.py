"""
Back-end de keyframes: dono único do grafo de poses.

Ingestão, agendamento de ligações, despacho de alinhamentos e otimização
passam por um único executor (dono). Os alinhamentos rodam em paralelo num
pool e seus resultados são ingeridos na ordem de submissão.
"""
import json
import logging
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple
import numpy as np

from app.config import PipelineConfig
from app.errors import EmptyOverlapError, NonConvergenceError, RejectedLinkError
from app.geometry.camera import CameraIntrinsics
from app.geometry.lie import PoseSE3, PoseSim3
from app.geometry.maps import DepthMap
from app.alignment import AlignmentProblem, AlignmentResult, AlignmentSettings, align, align_multi
from app.backend.priority import PriorityMatrix
from app.backend.posegraph import PoseGraphEdge, PoseGraphResult, optimize_pose_graph
from app.backend.retrieval import Retriever, RetrievalQuery, global_descriptor, retrieve


@dataclass(frozen=True)
class KeyframeRegistration:
    """
    Keyframe vindo do front-end.

    odometry: pose deste keyframe relativa ao anterior do mesmo trecho
    (câmera nova -> câmera anterior), com covariância 6x6 à esquerda.
    """
    frame: int
    segment: int
    depth: DepthMap
    confidence: np.ndarray
    world_pose: PoseSE3
    image: Optional[np.ndarray] = None
    odometry: Optional[PoseSE3] = None
    odometry_covariance: Optional[np.ndarray] = None
    scale_known: bool = True


@dataclass
class KeyframeNode:
    index: int
    frame: int
    segment: int
    pose: PoseSim3
    depth: DepthMap
    confidence: np.ndarray
    image: Optional[np.ndarray] = None
    descriptor: Optional[np.ndarray] = None
    scale_known: bool = True


@dataclass(frozen=True)
class GraphSnapshot:
    poses: Dict[int, PoseSim3]
    frames: Dict[int, int]
    segments: Dict[int, int]
    edges: Tuple[PoseGraphEdge, ...]
    processed: int

    def pose_of_frame(self, frame: int) -> Optional[PoseSim3]:
        for index, f in self.frames.items():
            if f == frame:
                return self.poses[index]
        return None


def floored_information(covariance: np.ndarray, eps_cov: float) -> np.ndarray:
    """Inversa da covariância com piso nos autovalores"""
    cov = 0.5 * (covariance + covariance.T)
    values, vectors = np.linalg.eigh(cov)
    values = np.maximum(values, eps_cov)
    return (vectors / values) @ vectors.T


def odometry_information(covariance: np.ndarray, scale_known: bool, config: PipelineConfig) -> np.ndarray:
    info = np.zeros((7, 7))
    info[:6, :6] = floored_information(covariance, config.eps_cov)
    info[6, 6] = config.scale_information_absolute if scale_known else config.scale_information_mono
    return info


def alignment_edge(i: int, j: int, result: AlignmentResult, kind: str, scale_known: bool,
                   config: PipelineConfig) -> PoseGraphEdge:
    """
    Aresta (alvo i, fonte j) a partir de um alinhamento.

    A covariância do LM (perturbação à esquerda, escala no alvo) é levada ao
    tangente à direita de Z = (R, t/s, 1/s) pela adjunta de Z^-1.
    """
    Z = result.relative_sim3()
    cov = np.zeros((7, 7))
    n = result.covariance.shape[0]
    cov[:n, :n] = result.covariance
    if n == 7:
        cov[6, :] *= -1.0
        cov[:, 6] *= -1.0
    else:
        cov[6, 6] = 1.0 / (config.scale_information_absolute if scale_known else config.scale_information_mono)
    Ad = Z.inverse().adjoint()
    cov = Ad @ cov @ Ad.T
    info = floored_information(cov, config.eps_cov)
    if n == 6:
        info[6, 6] = max(info[6, 6], config.scale_information_absolute if scale_known
                         else config.scale_information_mono)
    return PoseGraphEdge(i, j, Z, info, kind)


def export_graph(snapshot: GraphSnapshot, path) -> None:
    """Nós e arestas em JSON"""
    def sim3(S: PoseSim3) -> Dict:
        return {"rotation": S.rotation.tolist(), "translation": S.translation.tolist(), "scale": S.scale}

    document = {
        "nodes": [{"index": k, "frame": snapshot.frames[k], "segment": snapshot.segments[k], **sim3(S)}
                  for k, S in sorted(snapshot.poses.items())],
        "edges": [{"i": e.i, "j": e.j, "kind": e.kind, "constraint": sim3(e.constraint),
                   "information": e.information.tolist()} for e in snapshot.edges],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)


def load_graph(path) -> GraphSnapshot:
    with open(path, "r", encoding="utf-8") as f:
        document = json.load(f)

    def sim3(d: Dict) -> PoseSim3:
        return PoseSim3.from_parts(np.array(d["rotation"]), np.array(d["translation"]), d["scale"])

    nodes = document.get("nodes", [])
    edges = tuple(PoseGraphEdge(e["i"], e["j"], sim3(e["constraint"]), np.array(e["information"]), e["kind"])
                  for e in document.get("edges", []))
    return GraphSnapshot(
        poses={n["index"]: sim3(n) for n in nodes},
        frames={n["index"]: n["frame"] for n in nodes},
        segments={n["index"]: n["segment"] for n in nodes},
        edges=edges,
        processed=max((n["index"] for n in nodes), default=-1),
    )


def edge_list(snapshot: GraphSnapshot) -> List[str]:
    """Uma linha por aresta: i j tipo tx ty tz rx ry rz log_s"""
    lines = []
    for e in snapshot.edges:
        xi = e.constraint.log()
        values = " ".join(np.format_float_positional(float(x) + 0.0, precision=9, trim="-") for x in xi)
        lines.append(f"{e.i} {e.j} {e.kind} {values}")
    return lines


class PoseGraphBackend:
    """Grafo de keyframes com escritor único"""

    def __init__(self, K: CameraIntrinsics, config: PipelineConfig, retriever: Optional[Retriever] = None,
                 state=None):
        self.K = K
        self.config = config
        self.settings = AlignmentSettings.from_config(config)
        self.retriever = retriever
        self.state = state
        self.priority = PriorityMatrix(config.sigma_spatial, config.sigma_temporal, config.sigma_lc,
                                       config.loop_side_condition)
        self.nodes: Dict[int, KeyframeNode] = {}
        self.edges: Dict[Tuple[int, int, str], PoseGraphEdge] = {}
        self.realtime_since_optimization = 0
        self.last_optimization: Optional[PoseGraphResult] = None
        self.errors: List[BaseException] = []

        self._sync = config.sync
        self._owner = None if self._sync else ThreadPoolExecutor(max_workers=1, thread_name_prefix="graph")
        workers = max(1, config.threads - 1)
        self._pool = None if self._sync or workers == 1 else ThreadPoolExecutor(
            max_workers=workers, thread_name_prefix="align")
        self._slots = threading.BoundedSemaphore(config.queue_size)
        self._condition = threading.Condition()
        self._processed = -1
        self._next_kappa = 0
        self._snapshot = GraphSnapshot({}, {}, {}, (), -1)

    # ------------------------------------------------------------------ fila

    def register_keyframe(self, registration: KeyframeRegistration) -> int:
        """Enfileira um keyframe; devolve o índice kappa que ele recebe"""
        kappa = self._next_kappa
        self._next_kappa += 1
        if self._sync:
            self._ingest_keyframe(kappa, registration)
            return kappa
        self._slots.acquire()
        self._owner.submit(self._run_job, kappa, registration)
        return kappa

    def _run_job(self, kappa: int, registration: KeyframeRegistration) -> None:
        try:
            self._ingest_keyframe(kappa, registration)
        except BaseException as e:  # noqa: BLE001
            logging.exception(f"❌ Falha no back-end ao processar o keyframe {kappa}: {e}")
            self.errors.append(e)
            with self._condition:
                self._processed = max(self._processed, kappa)
                self._condition.notify_all()
        finally:
            self._slots.release()

    def wait_keyframe(self, kappa: int, timeout: Optional[float] = None) -> bool:
        """Bloqueia até o keyframe kappa ter sido processado"""
        with self._condition:
            return self._condition.wait_for(lambda: self._processed >= kappa, timeout=timeout)

    def snapshot(self) -> GraphSnapshot:
        with self._condition:
            return self._snapshot

    def close(self) -> GraphSnapshot:
        """Drena a fila, roda a otimização pendente e encerra os executores"""
        if self._owner is not None:
            self._owner.submit(self._finish)
            self._owner.shutdown(wait=True)
        else:
            self._finish()
        if self._pool is not None:
            self._pool.shutdown(wait=True)
        return self.snapshot()

    def _finish(self) -> None:
        if self.nodes and self.realtime_since_optimization > 0:
            self.optimize()
            self._publish(max(self.nodes))

    # ------------------------------------------------------------- ingestão

    def _publish(self, kappa: int) -> None:
        snapshot = GraphSnapshot(
            poses={k: n.pose for k, n in self.nodes.items()},
            frames={k: n.frame for k, n in self.nodes.items()},
            segments={k: n.segment for k, n in self.nodes.items()},
            edges=tuple(self.edges[k] for k in sorted(self.edges)),
            processed=kappa,
        )
        with self._condition:
            self._snapshot = snapshot
            self._processed = max(self._processed, kappa)
            self._condition.notify_all()

    def _count(self, key: str, n: int = 1) -> None:
        if self.state is not None:
            self.state.increment(key, n)

    def add_edge(self, edge: PoseGraphEdge) -> bool:
        """Pares duplicados mantêm a aresta de menor traço de covariância"""
        group = "odometry" if edge.kind == "odometry" else "link"
        key = (*edge.pair, group)
        current = self.edges.get(key)
        if current is not None:
            trace_new = np.trace(np.linalg.pinv(edge.information))
            trace_old = np.trace(np.linalg.pinv(current.information))
            if trace_new >= trace_old:
                if edge.kind == "loop-closure" and current.kind != "loop-closure":
                    logging.warning(f"⚠️ Fechamento de laço {edge.pair} descartado: a ligação {current.kind} "
                                    f"existente tem traço menor ({trace_old:.3g} <= {trace_new:.3g})")
                else:
                    logging.info(f"Aresta duplicada {edge.pair} ({edge.kind}); mantida a existente")
                return False
            logging.info(f"Aresta duplicada {edge.pair} ({edge.kind}); substitui a de traço maior")
        self.edges[key] = edge
        return True

    def _ingest_keyframe(self, kappa: int, reg: KeyframeRegistration) -> None:
        started = time.perf_counter()
        previous = self.nodes.get(kappa - 1)
        same_segment = previous is not None and previous.segment == reg.segment and reg.odometry is not None
        if same_segment:
            pose = previous.pose @ reg.odometry.to_sim3()
        else:
            pose = reg.world_pose.to_sim3()
        descriptor = None
        if reg.image is not None and self.config.retriever == "descriptor":
            descriptor = global_descriptor(reg.image, self.config.descriptor_size)
        node = KeyframeNode(kappa, reg.frame, reg.segment, pose, reg.depth, reg.confidence, reg.image,
                            descriptor, reg.scale_known)
        index = self.priority.add_keyframe()
        assert index == kappa
        self.nodes[kappa] = node
        self._count("keyframes")
        logging.info(f"Keyframe {kappa} (frame {reg.frame}, trecho {reg.segment}) no grafo")

        if same_segment:
            cov = reg.odometry_covariance if reg.odometry_covariance is not None else np.eye(6) * self.config.fallback_covariance
            info = odometry_information(cov, reg.scale_known, self.config)
            self.add_edge(PoseGraphEdge(kappa - 1, kappa, reg.odometry.to_sim3(), info, "odometry"))

        self._process_links(kappa)
        self._detect_loops(kappa)
        self._publish(kappa)
        if self.state is not None:
            self.state.add_timing("backend", time.perf_counter() - started)

    # ------------------------------------------------------------ ligações

    def _problem(self, i: int, j: int, init: Optional[PoseSim3] = None) -> AlignmentProblem:
        """Alvo i, fonte j; palpite inicial pela pose relativa atual do grafo"""
        target, source = self.nodes[i], self.nodes[j]
        Z = init if init is not None else target.pose.inverse() @ source.pose
        scale_known = target.scale_known and source.scale_known
        s0 = 1.0 if scale_known else 1.0 / Z.scale
        init_pose = PoseSE3(Z.rotation, Z.translation * s0)
        return AlignmentProblem(
            source_depth=source.depth, source_confidence=source.confidence,
            target_depth=target.depth, target_confidence=target.confidence,
            K=self.K, source_image=source.image, target_image=target.image,
            init_pose=init_pose, init_scale=s0, estimate_scale=not scale_known,
            use_photometric=self.config.use_photometric, weight=self.config.photometric_weight,
        )

    def _submit(self, fn: Callable, *args) -> Future:
        if self._pool is None:
            future: Future = Future()
            try:
                future.set_result(fn(*args))
            except BaseException as e:  # noqa: BLE001
                future.set_exception(e)
            return future
        return self._pool.submit(fn, *args)

    def _process_links(self, kappa: int) -> None:
        jobs: List[Tuple[int, int, Future]] = []
        for _ in range(self.config.links_per_keyframe):
            pair = self.priority.next_link(self.config.tau_link)
            if pair is None:
                break
            i, j = pair
            if self.nodes[i].segment != self.nodes[j].segment:
                logging.debug(f"Par {pair} cruza trechos; ignorado")
                continue
            self._count("links_attempted")
            jobs.append((i, j, self._submit(align, self._problem(i, j), self.settings)))
        for i, j, future in jobs:
            try:
                result = future.result()
            except (RejectedLinkError, NonConvergenceError, EmptyOverlapError) as e:
                logging.warning(f"⚠️ Ligação ({i}, {j}) rejeitada: {e}")
                continue
            self.ingest_alignment(i, j, result)

    def detect_loop_candidates(self, kappa: int) -> List[Tuple[int, int, AlignmentResult]]:
        """Recupera candidatos não recentes e verifica cada um por alinhamento multi-hipótese"""
        node = self.nodes[kappa]
        database = [RetrievalQuery(k, n.descriptor, n.frame) for k, n in self.nodes.items()
                    if k != kappa and n.segment == node.segment]
        candidates = retrieve(self.retriever, RetrievalQuery(kappa, node.descriptor, node.frame), database)
        verified = []
        for other, score in candidates:
            if abs(kappa - other) <= self.config.recency_gap:
                continue
            problem = self._problem(other, kappa)
            inits = [PoseSE3.identity(), problem.init_pose]
            try:
                result = align_multi(problem, inits, self.settings)
            except (RejectedLinkError, NonConvergenceError, EmptyOverlapError) as e:
                logging.info(f"Candidato de laço ({other}, {kappa}) rejeitado: {e}")
                continue
            if result.converged and result.inlier_ratio >= self.config.rho_min:
                verified.append((other, kappa, result))
            else:
                logging.info(f"Candidato de laço ({other}, {kappa}) reprovado: "
                             f"inliers {result.inlier_ratio:.1%}, convergiu={result.converged}")
        return verified

    def _detect_loops(self, kappa: int) -> None:
        if self.retriever is None or kappa <= self.config.recency_gap:
            return
        for i, j, result in self.detect_loop_candidates(kappa):
            self.priority.add_loop(j, i)
            self.priority.mark_linked(i, j)
            logging.info(f"Fechamento de laço ({i}, {j}) verificado")
            self.ingest_alignment(i, j, result, "loop-closure")

    def optimize(self) -> PoseGraphResult:
        started = time.perf_counter()
        poses = {k: n.pose for k, n in self.nodes.items()}
        result = optimize_pose_graph(poses, list(self.edges.values()), self.config.pgo_max_iterations,
                                     self.config.pgo_step_tol)
        for k, pose in result.poses.items():
            self.nodes[k].pose = pose
        self.realtime_since_optimization = 0
        self.last_optimization = result
        self._count("optimization_passes")
        if self.state is not None:
            self.state.add_timing("optimization", time.perf_counter() - started)
        return result

    def ingest_alignment(self, i: int, j: int, result: AlignmentResult, kind: str = "realtime-link") -> None:
        """Ingestão direta de um alinhamento já calculado (no dono)"""
        scale_known = self.nodes[i].scale_known and self.nodes[j].scale_known
        if self.add_edge(alignment_edge(i, j, result, kind, scale_known, self.config)):
            if kind == "loop-closure":
                logging.info(f"✅ Fechamento de laço ({i}, {j}) aceito")
                self._count("loop_closures")
                self.optimize()
            else:
                self._count("links_accepted")
                self.realtime_since_optimization += 1
                if self.realtime_since_optimization >= self.config.n_opt:
                    self.optimize()
