"""Grafo de keyframes: prioridade de ligações, recuperação de laços e otimização sim(3)."""
from app.backend.priority import PriorityMatrix, update_realtime_priorities, update_loop_priorities, next_link
from app.backend.retrieval import DescriptorRetriever, OracleRetriever, Retriever, RetrievalQuery, global_descriptor
from app.backend.posegraph import PoseGraphEdge, PoseGraphResult, graph_cost, optimize_pose_graph
from app.backend.graph import (
    GraphSnapshot, KeyframeNode, KeyframeRegistration, PoseGraphBackend, edge_list, export_graph, load_graph,
)

__all__ = [
    "PriorityMatrix", "update_realtime_priorities", "update_loop_priorities", "next_link",
    "DescriptorRetriever", "OracleRetriever", "Retriever", "RetrievalQuery", "global_descriptor",
    "PoseGraphEdge", "PoseGraphResult", "graph_cost", "optimize_pose_graph",
    "GraphSnapshot", "KeyframeNode", "KeyframeRegistration", "PoseGraphBackend",
    "edge_list", "export_graph", "load_graph",
]
