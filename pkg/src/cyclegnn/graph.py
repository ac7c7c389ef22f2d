"""Labeled undirected graphs, shortest-path neighborhoods, and expressiveness
oracles: color refinement, simple-cycle enumeration, and the doubled-graph
counterexample construction that defeats 1-hop message passing."""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class LabeledGraph:
    """Undirected graph with categorical node and edge feature vectors.

    Each undirected edge is stored once; no self-loops or parallel edges.
    Arrays are treated as immutable after construction.
    """

    num_nodes: int
    node_feats: np.ndarray  # (num_nodes, num_node_fields) small non-negative ints
    edges: np.ndarray  # (num_edges, 2) unordered pairs, each stored once
    edge_feats: np.ndarray  # (num_edges, num_edge_fields)

    def __post_init__(self):
        object.__setattr__(self, "node_feats", np.ascontiguousarray(self.node_feats, dtype=np.int64))
        object.__setattr__(self, "edges", np.ascontiguousarray(self.edges, dtype=np.int64).reshape(-1, 2))
        object.__setattr__(self, "edge_feats", np.ascontiguousarray(self.edge_feats, dtype=np.int64))
        n, edges = self.num_nodes, self.edges
        if self.node_feats.ndim != 2 or self.node_feats.shape[0] != n:
            raise ValueError(f"node_feats must be ({n}, fields), got {self.node_feats.shape}")
        if self.edge_feats.ndim != 2 or self.edge_feats.shape[0] != edges.shape[0]:
            raise ValueError("edge_feats must align with edges")
        if self.node_feats.size and self.node_feats.min() < 0:
            raise ValueError("node features must be non-negative")
        if self.edge_feats.size and self.edge_feats.min() < 0:
            raise ValueError("edge features must be non-negative")
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise ValueError("edge endpoint out of range")
            if (edges[:, 0] == edges[:, 1]).any():
                raise ValueError("self-loops are not allowed")
            canon = {tuple(sorted(e)) for e in edges.tolist()}
            if len(canon) != edges.shape[0]:
                raise ValueError("duplicate undirected edge")

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges.tolist():
            nbrs[u].append(v)
            nbrs[v].append(u)
        return tuple(tuple(sorted(a)) for a in nbrs)

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.adjacency[u] if 0 <= u < self.num_nodes else False


@dataclass(frozen=True)
class KHopIndex:
    """For every node, the nodes at shortest-path distance exactly k, k=1..k_max.

    ``pairs[k-1]`` is a pair of aligned int arrays (dst, src): node ``src`` is
    at distance k from node ``dst``. Both are sorted by dst then src.
    """

    num_nodes: int
    k_max: int
    pairs: tuple[tuple[np.ndarray, np.ndarray], ...]

    def neighbors(self, node: int, k: int) -> list[int]:
        if not 1 <= k <= self.k_max:
            raise ValueError(f"k must lie in 1..{self.k_max}")
        dst, src = self.pairs[k - 1]
        return src[dst == node].tolist()


def bfs_distances(g: LabeledGraph, start: int) -> np.ndarray:
    """Shortest-path distance from ``start`` to every node; unreachable nodes
    get ``inf``."""
    if not 0 <= start < g.num_nodes:
        raise ValueError(f"node id {start} out of range for {g.num_nodes} nodes")
    dist = np.full(g.num_nodes, np.inf)
    dist[start] = 0.0
    queue = deque([start])
    adj = g.adjacency
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] == np.inf:
                dist[v] = dist[u] + 1.0
                queue.append(v)
    return dist


def build_khop_index(g: LabeledGraph, k_max: int) -> KHopIndex:
    """Group every node's BFS shells into per-distance (dst, src) index arrays."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    dst_lists: list[list[int]] = [[] for _ in range(k_max)]
    src_lists: list[list[int]] = [[] for _ in range(k_max)]
    for i in range(g.num_nodes):
        dist = bfs_distances(g, i)
        for k in range(1, k_max + 1):
            shell = np.nonzero(dist == k)[0]
            dst_lists[k - 1].extend([i] * shell.size)
            src_lists[k - 1].extend(shell.tolist())
    pairs = tuple(
        (np.asarray(d, dtype=np.int64), np.asarray(s, dtype=np.int64))
        for d, s in zip(dst_lists, src_lists)
    )
    return KHopIndex(num_nodes=g.num_nodes, k_max=k_max, pairs=pairs)


def enumerate_simple_cycles(g: LabeledGraph, max_len: int) -> list[tuple[int, ...]]:
    """All simple cycles of length 3..max_len, each reported once.

    Canonical form: the smallest node id comes first and of the two walk
    directions the lexicographically smaller one is kept.
    """
    if max_len < 3:
        raise ValueError("max_len must be at least 3")
    adj = g.adjacency
    cycles: list[tuple[int, ...]] = []
    path: list[int] = []
    on_path = [False] * g.num_nodes

    def extend(root: int, node: int) -> None:
        for nxt in adj[node]:
            if nxt == root and len(path) >= 3:
                # Keep one direction: second node smaller than last.
                if path[1] < path[-1]:
                    cycles.append(tuple(path))
            elif nxt > root and not on_path[nxt] and len(path) < max_len:
                path.append(nxt)
                on_path[nxt] = True
                extend(root, nxt)
                on_path[nxt] = False
                path.pop()

    for root in range(g.num_nodes):
        path = [root]
        extend(root, root)
    cycles.sort()
    return cycles


def wl_refine(g: LabeledGraph, iterations: int) -> list[np.ndarray]:
    """Color refinement: returns node colors for iterations 0..iterations.

    Iteration 0 colors nodes by their feature vectors. Each step recodes
    (own color, sorted neighbor colors) injectively through an interned
    dictionary, so partitions only ever refine.
    """
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    intern: dict[tuple, int] = {}
    colors = np.empty(g.num_nodes, dtype=np.int64)
    for i in range(g.num_nodes):
        colors[i] = intern.setdefault(tuple(g.node_feats[i]), len(intern))
    history = [colors]
    adj = g.adjacency
    for _ in range(iterations):
        intern = {}
        prev = history[-1]
        nxt = np.empty(g.num_nodes, dtype=np.int64)
        for i in range(g.num_nodes):
            signature = (int(prev[i]), tuple(sorted(int(prev[j]) for j in adj[i])))
            nxt[i] = intern.setdefault(signature, len(intern))
        history.append(nxt)
    return history


def wl_graph_hash(g: LabeledGraph, iterations: int) -> str:
    """Digest of the refined color histogram, comparable across graphs.

    Node labels are canonical strings (feature tuples, then per-iteration
    digests of own label plus sorted neighbor labels), so two graphs that
    color refinement cannot distinguish hash identically, independent of
    node numbering.
    """
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    labels = ["f" + ",".join(map(str, g.node_feats[i])) for i in range(g.num_nodes)]
    adj = g.adjacency
    for _ in range(iterations):
        labels = [
            hashlib.sha256(
                (labels[i] + "|" + ";".join(sorted(labels[j] for j in adj[i]))).encode()
            ).hexdigest()
            for i in range(g.num_nodes)
        ]
    return hashlib.sha256("\n".join(sorted(labels)).encode()).hexdigest()


def make_counterexample_pair(g: LabeledGraph, edge: tuple[int, int]) -> LabeledGraph:
    """Double the graph and swap one edge between the two copies.

    The result has two feature-identical copies of ``g`` where edge (i, j)
    and its copy (i', j') are replaced by the crossings (i, j') and (i', j),
    keeping the original edge features. When ``g`` contains a cycle, 1-hop
    convolutions give every node and both of its copies identical embeddings,
    so the pair is indistinguishable from two plain copies.
    """
    i, j = edge
    if not g.has_edge(i, j):
        raise ValueError(f"edge ({i}, {j}) not present")
    n = g.num_nodes
    new_edges = []
    new_feats = []
    match = lambda u, v: (u == i and v == j) or (u == j and v == i)
    for (u, v), feats in zip(g.edges.tolist(), g.edge_feats):
        if match(u, v):
            new_edges.append((u, v + n))
        else:
            new_edges.append((u, v))
        new_feats.append(feats)
    for (u, v), feats in zip(g.edges.tolist(), g.edge_feats):
        if match(u, v):
            new_edges.append((u + n, v))
        else:
            new_edges.append((u + n, v + n))
        new_feats.append(feats)
    return LabeledGraph(
        num_nodes=2 * n,
        node_feats=np.concatenate([g.node_feats, g.node_feats], axis=0),
        edges=np.asarray(new_edges, dtype=np.int64),
        edge_feats=np.asarray(new_feats, dtype=np.int64),
    )
