import numpy as np
import pytest

from app.backend import (
    DescriptorRetriever, KeyframeRegistration, OracleRetriever, PoseGraphBackend, PoseGraphEdge, PriorityMatrix,
    RetrievalQuery, edge_list, export_graph, global_descriptor, graph_cost, load_graph, optimize_pose_graph,
    update_loop_priorities, update_realtime_priorities,
)
import app.backend.posegraph as posegraph_module
from app.backend.retrieval import retrieve
from app.errors import InvalidInputError
from app.geometry import PoseSE3, PoseSim3
from app.state import StateManager


def _sim3(xi) -> PoseSim3:
    return PoseSim3.exp(np.asarray(xi, dtype=np.float64))


def _edge(poses, i, j, kind="odometry", weight=1.0) -> PoseGraphEdge:
    return PoseGraphEdge(i, j, poses[i].inverse() @ poses[j], np.eye(7) * weight, kind)


def _sim3_distance(a: PoseSim3, b: PoseSim3) -> float:
    return float(np.linalg.norm((a.inverse() @ b).log()))


# ---------------------------------------------------------------- prioridade

def test_realtime_priority_value():
    """kappa = 6 e sigma = 2: Q[4, 6] = e^-1"""
    Q = update_realtime_priorities(6, 2.0, 2.0)
    assert Q.shape == (7, 7)
    assert Q[4, 6] == pytest.approx(np.exp(-1.0))
    assert Q[6, 4] == pytest.approx(np.exp(-1.0))
    assert np.all(np.diag(Q) == 0.0)


def test_loop_priority_values():
    """Laço (2, 8) com sigma_lc = 2"""
    Q = update_loop_priorities(10, (2, 8), 2.0)
    assert Q[3, 8] == pytest.approx(np.exp(-0.25))
    assert Q[2, 8] == pytest.approx(1.0)
    assert Q[8, 2] == pytest.approx(1.0)
    assert np.allclose(Q, Q.T)


def test_loop_priority_side_conditions():
    """Condição por extremidade zera pares do lado errado; a pareada não"""
    endpoint = update_loop_priorities(10, (2, 8), 2.0, "endpoint")
    paired = update_loop_priorities(10, (2, 8), 2.0, "paired")
    assert np.all(paired >= endpoint - 1e-15)
    assert paired[7, 8] > 0.0
    assert endpoint[7, 8] == pytest.approx(endpoint[8, 7])


def _brute_force_priority(n, loops, sigma_spatial, sigma_temporal, sigma_lc, side_condition):
    kappa = n - 1
    Q = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            value = min(1.0, np.exp(-(i - j) ** 2 / sigma_spatial**2 - (kappa - i) * (kappa - j) / sigma_temporal**2))
            for k, kp in loops:
                for a, b in ((i, j), (j, i)):
                    if side_condition == "endpoint" and abs(a - k) > abs(b - k):
                        continue
                    value = max(value, np.exp(-(abs(a - k) + abs(b - kp)) ** 2 / sigma_lc**2))
            Q[i, j] = value
    return Q


@pytest.mark.parametrize("side_condition", ["endpoint", "paired"])
def test_priority_matches_brute_force(rng, side_condition):
    """Máximo das camadas e ordem de ligação conferidos por enumeração em até 20 keyframes"""
    for n in (2, 7, 20):
        priority = PriorityMatrix(2.0, 6.0, 2.5, side_condition)
        for _ in range(n):
            priority.add_keyframe()
        loops = [tuple(sorted(rng.choice(n, size=2, replace=False))) for _ in range(n // 5)]
        for k, kp in loops:
            priority.add_loop(int(k), int(kp))
        expected = _brute_force_priority(n, loops, 2.0, 6.0, 2.5, side_condition)
        np.testing.assert_allclose(priority.combined(), expected, rtol=1e-12, atol=1e-15)

        linked = set()
        while True:
            pair = priority.next_link(0.05)
            candidates = [(expected[i, j], (i, j)) for i in range(n) for j in range(i + 1, n)
                          if (i, j) not in linked and expected[i, j] > 0.05]
            if pair is None:
                assert not candidates
                break
            assert expected[pair] == pytest.approx(max(c[0] for c in candidates))
            linked.add(pair)


def test_next_link_order():
    """Pares saem em ordem decrescente de prioridade e nunca se repetem"""
    priority = PriorityMatrix(3.0, 10.0, 3.0)
    for _ in range(3):
        priority.add_keyframe()
    assert priority.next_link(0.1) == (1, 2)
    assert priority.next_link(0.1) == (0, 1)
    assert priority.next_link(0.1) == (0, 2)
    assert priority.next_link(0.1) is None


def test_next_link_respects_threshold():
    priority = PriorityMatrix(1.0, 1.0, 1.0)
    assert priority.next_link(0.1) is None
    for _ in range(4):
        priority.add_keyframe()
    assert priority.next_link(0.99) is None


def test_loop_layer_raises_priorities():
    priority = PriorityMatrix(1.0, 1.0, 2.0)
    for _ in range(10):
        priority.add_keyframe()
    before = priority.combined()[3, 8]
    priority.add_loop(2, 8)
    assert priority.combined()[3, 8] > before
    with pytest.raises(ValueError):
        PriorityMatrix(side_condition="both")


# ------------------------------------------------------------------- grafo

def test_pose_graph_noiseless_recovery(rng):
    """Arestas exatas trazem poses perturbadas de volta à verdade"""
    truth = {k: _sim3(np.concatenate([[k * 1.0, 0.1 * k, 0.0], [0.0, 0.1 * k, 0.0], [0.05 * k]])) for k in range(5)}
    edges = [_edge(truth, k, k + 1) for k in range(4)] + [_edge(truth, 0, 4, "loop-closure")]
    start = {k: (S if k == 0 else S @ _sim3(rng.normal(0.0, 0.05, 7))) for k, S in truth.items()}
    result = optimize_pose_graph(start, edges)
    assert result.cost_before > result.cost_after
    assert result.cost_after < 1e-10
    assert not result.flagged
    for k in truth:
        assert _sim3_distance(result.poses[k], truth[k]) < 1e-5


def test_pose_graph_costs_never_increase(rng):
    """Custo monotônico numa volta com arestas ruidosas"""
    n = 8
    truth = {}
    for k in range(n):
        angle = 2 * np.pi * k / n
        truth[k] = PoseSE3.exp([3.0 * np.sin(angle), 0.0, 3.0 * np.cos(angle), 0.0, angle, 0.0]).to_sim3()
    edges = []
    for k in range(n):
        j = (k + 1) % n
        noisy = (truth[k].inverse() @ truth[j]) @ _sim3(rng.normal(0.0, 0.02, 7))
        edges.append(PoseGraphEdge(min(k, j), max(k, j), noisy if k < j else noisy.inverse(), np.eye(7) * 100.0))
    start = {k: truth[k] @ _sim3(rng.normal(0.0, 0.1, 7)) if k else truth[k] for k in truth}
    result = optimize_pose_graph(start, edges)
    assert result.cost_after < result.cost_before
    assert all(b <= a + 1e-9 for a, b in zip(result.costs, result.costs[1:]))
    assert result.cost_after == pytest.approx(graph_cost(result.poses, edges))


def test_pose_graph_gauge_invariance(rng):
    """Otimizar G S0 dá G vezes o ótimo de S0"""
    n = 6
    truth = {k: PoseSE3.exp([2.0 * np.sin(k), 0.0, 2.0 * np.cos(k), 0.0, 0.5 * k, 0.0]).to_sim3() for k in range(n)}
    edges = []
    for k in range(n):
        j = (k + 1) % n
        i, j = min(k, j), max(k, j)
        edges.append(PoseGraphEdge(i, j, (truth[i].inverse() @ truth[j]) @ _sim3(rng.normal(0.0, 0.02, 7)),
                                   np.eye(7) * 50.0))
    start = {k: truth[k] @ _sim3(rng.normal(0.0, 0.05, 7)) if k else truth[k] for k in truth}
    G = _sim3([1.0, -2.0, 0.5, 0.3, -0.2, 0.1, np.log(2.0)])
    plain = optimize_pose_graph(start, edges)
    moved = optimize_pose_graph({k: G @ S for k, S in start.items()}, edges)
    assert moved.cost_after == pytest.approx(plain.cost_after, rel=1e-6, abs=1e-12)
    for k in truth:
        assert _sim3_distance(moved.poses[k], G @ plain.poses[k]) < 1e-5


def test_pose_graph_disconnected_components(rng):
    """Cada componente fixa o próprio primeiro nó e o resultado sai sinalizado"""
    truth = {k: _sim3([k * 1.0, 0, 0, 0, 0, 0, 0]) for k in range(4)}
    edges = [_edge(truth, 0, 1), _edge(truth, 2, 3)]
    start = dict(truth)
    start[3] = truth[3] @ _sim3([0.2, 0, 0, 0, 0, 0, 0])
    result = optimize_pose_graph(start, edges)
    assert result.flagged
    assert result.components == 2
    assert _sim3_distance(result.poses[2], truth[2]) == pytest.approx(0.0, abs=1e-12)
    assert _sim3_distance(result.poses[3], truth[3]) < 1e-5


def test_pose_graph_without_edges():
    poses = {0: PoseSim3.identity(), 1: _sim3([1, 0, 0, 0, 0, 0, 0])}
    result = optimize_pose_graph(poses, [])
    assert result.iterations == 0
    assert result.converged
    assert not result.stalled


def test_pose_graph_stall_is_not_convergence(rng, monkeypatch):
    """Quando nenhum amortecimento reduz o custo o resultado sai travado, não convergido"""
    truth = {k: _sim3([k * 1.0, 0, 0, 0, 0, 0, 0]) for k in range(3)}
    edges = [_edge(truth, 0, 1), _edge(truth, 1, 2)]
    start = {k: (S if k == 0 else S @ _sim3(rng.normal(0.0, 0.05, 7))) for k, S in truth.items()}
    real = posegraph_module.graph_cost
    calls = {"n": 0}

    def rising_cost(poses, graph_edges):
        calls["n"] += 1
        return real(poses, graph_edges) + calls["n"]

    monkeypatch.setattr(posegraph_module, "graph_cost", rising_cost)
    result = optimize_pose_graph(start, edges)
    assert result.stalled
    assert not result.converged
    assert result.iterations == 1
    assert all(result.poses[k] is start[k] for k in start)


def test_pose_graph_converged_is_not_stalled(rng):
    truth = {k: _sim3([k * 1.0, 0, 0, 0, 0, 0, 0]) for k in range(3)}
    edges = [_edge(truth, 0, 1), _edge(truth, 1, 2)]
    start = {k: (S if k == 0 else S @ _sim3(rng.normal(0.0, 0.05, 7))) for k, S in truth.items()}
    result = optimize_pose_graph(start, edges)
    assert result.converged and not result.stalled


def test_edge_validation():
    with pytest.raises(InvalidInputError):
        PoseGraphEdge(1, 1, PoseSim3.identity(), np.eye(7))
    with pytest.raises(InvalidInputError):
        PoseGraphEdge(0, 1, PoseSim3.identity(), np.eye(6))
    with pytest.raises(InvalidInputError):
        PoseGraphEdge(0, 1, PoseSim3.identity(), np.eye(7), "gps")


# -------------------------------------------------------------- recuperação

def test_descriptor_retriever(room_frames):
    """Imagem idêntica tem similaridade 1; keyframes recentes ficam de fora"""
    _, image = room_frames[0]
    _, other = room_frames[3]
    d0, d3 = global_descriptor(image), global_descriptor(other)
    assert d0.shape == (16 * 12,)
    assert np.linalg.norm(d0) == pytest.approx(1.0)
    database = [RetrievalQuery(0, d0), RetrievalQuery(1, d3), RetrievalQuery(9, d0)]
    retriever = DescriptorRetriever(min_score=0.5, top_k=3, recency_gap=5)
    hits = retriever.query(RetrievalQuery(10, d0), database)
    assert hits[0] == (0, pytest.approx(1.0))
    assert all(index != 9 for index, _ in hits)


def test_oracle_retriever_uses_frames():
    truth = {0: PoseSE3.identity(), 40: PoseSE3(np.eye(3), [0.3, 0, 0]), 80: PoseSE3(np.eye(3), [0.1, 0, 0])}
    retriever = OracleRetriever(truth, max_distance=1.0, recency_gap=1)
    database = [RetrievalQuery(0, frame=0), RetrievalQuery(1, frame=40)]
    hits = retriever.query(RetrievalQuery(2, frame=80), database)
    assert [index for index, _ in hits] == [0]
    assert retrieve(retriever, RetrievalQuery(2, frame=99), database) == []
    assert retrieve(None, RetrievalQuery(2, frame=80), database) == []


# ----------------------------------------------------------------- back-end

def _registration(room, room_frames, frame, previous=None, segment=0, relative_pose=None):
    depth, image = room_frames[frame]
    odometry = None
    covariance = None
    if previous is not None:
        odometry = relative_pose(room, frame, previous)
        covariance = np.eye(6) * 1e-4
    return KeyframeRegistration(frame=frame, segment=segment, depth=depth, confidence=np.ones(depth.shape),
                                world_pose=room.pose(frame), image=image, odometry=odometry,
                                odometry_covariance=covariance)


def test_backend_odometry_and_link(room, room_frames, camera, fast_config, relative_pose):
    """Dois keyframes: aresta de odometria, uma ligação e otimização final no fechamento"""
    state = StateManager()
    backend = PoseGraphBackend(camera, fast_config, state=state)
    assert backend.register_keyframe(_registration(room, room_frames, 0, relative_pose=relative_pose)) == 0
    assert backend.register_keyframe(_registration(room, room_frames, 2, 0, relative_pose=relative_pose)) == 1
    snapshot = backend.close()
    kinds = sorted(e.kind for e in snapshot.edges)
    assert kinds == ["odometry", "realtime-link"]
    assert state.get("keyframes") == 2
    assert state.get("links_attempted") == 1
    assert state.get("links_accepted") == 1
    assert state.get("optimization_passes") == 1
    link = next(e for e in snapshot.edges if e.kind == "realtime-link")
    assert _sim3_distance(link.constraint, relative_pose(room, 2, 0).to_sim3()) < 0.01
    relative = snapshot.poses[0].inverse() @ snapshot.poses[1]
    assert _sim3_distance(relative, relative_pose(room, 2, 0).to_sim3()) < 0.01
    assert snapshot.pose_of_frame(2) is snapshot.poses[1]


def test_backend_duplicate_edges_keep_lower_trace(camera, fast_config):
    backend = PoseGraphBackend(camera, fast_config)
    Z = _sim3([0.1, 0, 0, 0, 0, 0, 0])
    assert backend.add_edge(PoseGraphEdge(0, 1, Z, np.eye(7), "realtime-link"))
    assert backend.add_edge(PoseGraphEdge(1, 0, Z.inverse(), np.eye(7) * 10.0, "loop-closure"))
    assert not backend.add_edge(PoseGraphEdge(0, 1, Z, np.eye(7) * 2.0, "realtime-link"))
    assert backend.add_edge(PoseGraphEdge(0, 1, Z, np.eye(7), "odometry"))
    assert len(backend.edges) == 2
    assert backend.edges[(0, 1, "link")].kind == "loop-closure"


def test_backend_logs_loop_closure_losing_to_link(camera, fast_config, caplog):
    """Laço pior que a ligação existente é descartado com aviso"""
    backend = PoseGraphBackend(camera, fast_config)
    Z = _sim3([0.1, 0, 0, 0, 0, 0, 0])
    assert backend.add_edge(PoseGraphEdge(0, 1, Z, np.eye(7) * 10.0, "realtime-link"))
    with caplog.at_level("WARNING"):
        assert not backend.add_edge(PoseGraphEdge(0, 1, Z, np.eye(7), "loop-closure"))
    assert backend.edges[(0, 1, "link")].kind == "realtime-link"
    assert any("descartado" in r.getMessage() and r.levelname == "WARNING" for r in caplog.records)


def test_backend_separate_segments_do_not_link(room, room_frames, camera, fast_config, relative_pose):
    backend = PoseGraphBackend(camera, fast_config)
    backend.register_keyframe(_registration(room, room_frames, 0, relative_pose=relative_pose))
    backend.register_keyframe(_registration(room, room_frames, 2, segment=1, relative_pose=relative_pose))
    snapshot = backend.close()
    assert snapshot.edges == ()
    assert snapshot.segments == {0: 0, 1: 1}


def test_backend_oracle_loop_closure(room, room_frames, camera, fast_config, relative_pose):
    """Keyframe revisitando a origem fecha um laço verificado"""
    config = fast_config.with_overrides(recency_gap=1, links_per_keyframe=0)
    truth = {k: room.pose(k) for k in range(4)}
    state = StateManager()
    backend = PoseGraphBackend(camera, config, retriever=OracleRetriever(truth, recency_gap=1), state=state)
    backend.register_keyframe(_registration(room, room_frames, 0, relative_pose=relative_pose))
    backend.register_keyframe(_registration(room, room_frames, 1, 0, relative_pose=relative_pose))
    backend.register_keyframe(_registration(room, room_frames, 2, 1, relative_pose=relative_pose))
    snapshot = backend.close()
    assert state.get("loop_closures") == 1
    loops = [e for e in snapshot.edges if e.kind == "loop-closure"]
    assert [(e.i, e.j) for e in loops] == [(0, 2)]
    assert _sim3_distance(loops[0].constraint, relative_pose(room, 2, 0).to_sim3()) < 0.01


def test_backend_threaded_matches_sync(room, room_frames, camera, fast_config, relative_pose):
    """Execução com threads produz as mesmas arestas da serializada"""
    def run(config):
        backend = PoseGraphBackend(camera, config)
        kappa = None
        for previous, frame in ((None, 0), (0, 1), (1, 2), (2, 3)):
            kappa = backend.register_keyframe(_registration(room, room_frames, frame, previous,
                                                            relative_pose=relative_pose))
        assert config.sync or backend.wait_keyframe(kappa, timeout=120.0)
        snapshot = backend.close()
        assert backend.errors == []
        return snapshot

    sync = run(fast_config)
    threaded = run(fast_config.with_overrides(sync=False, threads=3))
    assert [(e.i, e.j, e.kind) for e in sync.edges] == [(e.i, e.j, e.kind) for e in threaded.edges]
    for k in sync.poses:
        assert _sim3_distance(sync.poses[k], threaded.poses[k]) < 1e-6


def test_graph_export_round_trip(tmp_path, room, room_frames, camera, fast_config, relative_pose):
    backend = PoseGraphBackend(camera, fast_config)
    backend.register_keyframe(_registration(room, room_frames, 0, relative_pose=relative_pose))
    backend.register_keyframe(_registration(room, room_frames, 2, 0, relative_pose=relative_pose))
    snapshot = backend.close()
    path = tmp_path / "posegraph.json"
    export_graph(snapshot, path)
    loaded = load_graph(path)
    assert loaded.frames == {0: 0, 1: 2}
    assert loaded.processed == 1
    assert edge_list(loaded) == edge_list(snapshot)
    for line in edge_list(loaded):
        fields = line.split()
        assert len(fields) == 10
        assert fields[2] in ("odometry", "realtime-link")
