import numpy as np

from cyclegnn.graph import LabeledGraph


def plain(num_nodes, edges):
    """Graph with all-zero single-field features."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return LabeledGraph(
        num_nodes=num_nodes,
        node_feats=np.zeros((num_nodes, 1), dtype=np.int64),
        edges=edges,
        edge_feats=np.zeros((edges.shape[0], 1), dtype=np.int64),
    )


def random_graph(rng, n, p=0.3):
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return plain(n, edges)


def permute_graph(g: LabeledGraph, perm: np.ndarray) -> LabeledGraph:
    """Relabel nodes so old node i becomes perm[i]."""
    inv = np.empty_like(perm)
    inv[perm] = np.arange(g.num_nodes)
    return LabeledGraph(
        num_nodes=g.num_nodes,
        node_feats=g.node_feats[inv],
        edges=perm[g.edges] if g.num_edges else g.edges,
        edge_feats=g.edge_feats,
    )
