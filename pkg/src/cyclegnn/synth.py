"""Synthetic graph and dataset generators for the cycle-detection benchmarks
and for pipeline tests. Everything is deterministic given the seed."""

from __future__ import annotations

import numpy as np

from .data import Dataset, DatasetManifest
from .graph import LabeledGraph

# Ways to write 12 as a sum of cycle lengths >= 3, keyed by smallest part.
_TWELVE_NODE_PARTITIONS = {
    3: ((3, 9), (3, 3, 6), (3, 4, 5), (3, 3, 3, 3)),
    4: ((4, 8), (4, 4, 4)),
    6: ((6, 6),),
}

TASK_MIN_CYCLE = "min-cycle-class"
TASK_HAS_SMALL_CYCLE = "has-small-cycle"
TASK_RANDOM_MULTITASK = "random-multitask"
TASK_SPECS = (TASK_MIN_CYCLE, TASK_HAS_SMALL_CYCLE, TASK_RANDOM_MULTITASK)


def gen_cycle_union(
    cycle_lengths, num_node_fields: int = 1, num_edge_fields: int = 1
) -> LabeledGraph:
    """Disjoint union of simple cycles with uniform all-zero features."""
    lengths = list(cycle_lengths)
    if any(c < 3 for c in lengths):
        raise ValueError("cycle lengths must be at least 3")
    edges = []
    offset = 0
    for c in lengths:
        edges.extend((offset + t, offset + (t + 1) % c) for t in range(c))
        offset += c
    return LabeledGraph(
        num_nodes=offset,
        node_feats=np.zeros((offset, num_node_fields), dtype=np.int64),
        edges=np.asarray(edges, dtype=np.int64),
        edge_feats=np.zeros((len(edges), num_edge_fields), dtype=np.int64),
    )


def _permute_nodes(g: LabeledGraph, rng: np.random.Generator) -> LabeledGraph:
    perm = rng.permutation(g.num_nodes)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(g.num_nodes)
    return LabeledGraph(
        num_nodes=g.num_nodes,
        node_feats=g.node_feats[inv],
        edges=perm[g.edges] if g.num_edges else g.edges,
        edge_feats=g.edge_feats,
    )


def random_tree(num_nodes: int, rng: np.random.Generator) -> LabeledGraph:
    """Uniform random-attachment tree with all-zero features."""
    edges = [(int(rng.integers(0, v)), v) for v in range(1, num_nodes)]
    return LabeledGraph(
        num_nodes=num_nodes,
        node_feats=np.zeros((num_nodes, 1), dtype=np.int64),
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        edge_feats=np.zeros((len(edges), 1), dtype=np.int64),
    )


def random_unicyclic(num_nodes: int, cycle_len: int, rng: np.random.Generator) -> LabeledGraph:
    """One cycle of the given length with the remaining nodes attached as a tree."""
    if cycle_len < 3 or cycle_len > num_nodes:
        raise ValueError("cycle_len must lie in 3..num_nodes")
    edges = [(t, (t + 1) % cycle_len) for t in range(cycle_len)]
    for v in range(cycle_len, num_nodes):
        edges.append((int(rng.integers(0, v)), v))
    return LabeledGraph(
        num_nodes=num_nodes,
        node_feats=np.zeros((num_nodes, 1), dtype=np.int64),
        edges=np.asarray(edges, dtype=np.int64),
        edge_feats=np.zeros((len(edges), 1), dtype=np.int64),
    )


def _gen_min_cycle_class(size: int, rng: np.random.Generator) -> Dataset:
    classes = (3, 4, 6)
    graphs = []
    labels = np.zeros((size, 3))
    for idx in range(size):
        cls = classes[idx % 3]  # round robin keeps the classes balanced
        options = _TWELVE_NODE_PARTITIONS[cls]
        parts = options[int(rng.integers(0, len(options)))]
        graphs.append(_permute_nodes(gen_cycle_union(parts), rng))
        labels[idx, classes.index(cls)] = 1.0
    order = rng.permutation(size)
    manifest = DatasetManifest(
        node_field_cardinalities=(1,),
        edge_field_cardinalities=(1,),
        task_names=("min_cycle_3", "min_cycle_4", "min_cycle_6"),
    )
    return Dataset([graphs[i] for i in order], labels[order], manifest)


def _gen_has_small_cycle(size: int, rng: np.random.Generator) -> Dataset:
    graphs = []
    labels = np.zeros((size, 1))
    for idx in range(size):
        n = int(rng.integers(10, 17))
        if idx % 2 == 0:
            graphs.append(random_tree(n, rng))
        else:
            graphs.append(random_unicyclic(n, int(rng.integers(3, 7)), rng))
            labels[idx, 0] = 1.0
    order = rng.permutation(size)
    manifest = DatasetManifest(
        node_field_cardinalities=(1,),
        edge_field_cardinalities=(1,),
        task_names=("has_small_cycle",),
    )
    return Dataset([graphs[i] for i in order], labels[order], manifest)


def _gen_random_multitask(size: int, rng: np.random.Generator) -> Dataset:
    node_cards = (5, 3)
    edge_cards = (4,)
    num_tasks = 4
    graphs = []
    labels = np.full((size, num_tasks), np.nan)
    for idx in range(size):
        n = int(rng.integers(6, 13))
        pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
        keep = rng.random(len(pairs)) < 0.3
        edges = np.asarray([p for p, k in zip(pairs, keep) if k], dtype=np.int64).reshape(-1, 2)
        node_feats = np.stack([rng.integers(0, c, size=n) for c in node_cards], axis=1)
        edge_feats = np.stack(
            [rng.integers(0, c, size=edges.shape[0]) for c in edge_cards], axis=1
        )
        graphs.append(
            LabeledGraph(num_nodes=n, node_feats=node_feats, edges=edges, edge_feats=edge_feats)
        )
        observed = rng.random(num_tasks) >= 0.4
        values = (rng.random(num_tasks) < 0.3).astype(float)
        labels[idx, observed] = values[observed]
    manifest = DatasetManifest(
        node_field_cardinalities=node_cards,
        edge_field_cardinalities=edge_cards,
        task_names=tuple(f"task_{t}" for t in range(num_tasks)),
    )
    return Dataset(graphs, labels, manifest)


def gen_synthetic_dataset(task_spec: str, size: int, seed: int) -> Dataset:
    """Build one of the shipped synthetic datasets.

    Tasks:
      - ``min-cycle-class``: 12-node 2-regular cycle unions, three one-vs-rest
        tasks for smallest cycle length 3, 4 or 6.
      - ``has-small-cycle``: random trees (0) vs unicyclic graphs whose cycle
        has length at most 6 (1).
      - ``random-multitask``: random graphs with sparse random labels and
        missing entries, for pipeline tests.
    """
    if size < 1:
        raise ValueError("size must be at least 1")
    rng = np.random.default_rng(seed)
    if task_spec == TASK_MIN_CYCLE:
        return _gen_min_cycle_class(size, rng)
    if task_spec == TASK_HAS_SMALL_CYCLE:
        return _gen_has_small_cycle(size, rng)
    if task_spec == TASK_RANDOM_MULTITASK:
        return _gen_random_multitask(size, rng)
    raise ValueError(f"unknown task spec {task_spec!r}; expected one of {TASK_SPECS}")
