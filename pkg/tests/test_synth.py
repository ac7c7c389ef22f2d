import numpy as np
import pytest

from cyclegnn.graph import enumerate_simple_cycles
from cyclegnn.synth import (
    gen_cycle_union,
    gen_synthetic_dataset,
    random_tree,
    random_unicyclic,
)


class TestCycleUnion:
    def test_two_triangles(self):
        g = gen_cycle_union([3, 3])
        assert g.num_nodes == 6 and g.num_edges == 6
        assert len(enumerate_simple_cycles(g, 6)) == 2

    def test_c6(self):
        g = gen_cycle_union([6])
        assert (g.num_nodes, g.num_edges) == (6, 6)

    def test_mixed_union(self):
        g = gen_cycle_union([3, 4, 6])
        assert (g.num_nodes, g.num_edges) == (13, 13)
        assert min(len(c) for c in enumerate_simple_cycles(g, 13)) == 3

    def test_two_regular(self):
        g = gen_cycle_union([4, 5])
        assert all(g.degree(i) == 2 for i in range(g.num_nodes))

    def test_uniform_zero_features(self):
        g = gen_cycle_union([5], num_node_fields=2, num_edge_fields=3)
        assert g.node_feats.shape == (5, 2) and not g.node_feats.any()
        assert g.edge_feats.shape == (5, 3) and not g.edge_feats.any()

    def test_short_cycle_rejected(self):
        with pytest.raises(ValueError):
            gen_cycle_union([3, 2])


class TestMinCycleClass:
    def test_labels_match_cycle_oracle(self):
        ds = gen_synthetic_dataset("min-cycle-class", 60, seed=1)
        classes = (3, 4, 6)
        for g, row in zip(ds.graphs, ds.labels):
            smallest = min(len(c) for c in enumerate_simple_cycles(g, 12))
            expected = np.zeros(3)
            expected[classes.index(smallest)] = 1.0
            np.testing.assert_array_equal(row, expected)

    def test_graphs_are_12_node_2_regular(self):
        ds = gen_synthetic_dataset("min-cycle-class", 30, seed=2)
        for g in ds.graphs:
            assert g.num_nodes == 12
            assert all(g.degree(i) == 2 for i in range(12))

    def test_classes_balanced(self):
        ds = gen_synthetic_dataset("min-cycle-class", 90, seed=3)
        np.testing.assert_array_equal(ds.labels.sum(axis=0), [30, 30, 30])

    def test_deterministic(self):
        a = gen_synthetic_dataset("min-cycle-class", 20, seed=4)
        b = gen_synthetic_dataset("min-cycle-class", 20, seed=4)
        np.testing.assert_array_equal(a.labels, b.labels)
        for ga, gb in zip(a.graphs, b.graphs):
            np.testing.assert_array_equal(ga.edges, gb.edges)


class TestHasSmallCycle:
    def test_labels_by_construction(self):
        ds = gen_synthetic_dataset("has-small-cycle", 40, seed=5)
        for g, row in zip(ds.graphs, ds.labels):
            cycles = enumerate_simple_cycles(g, g.num_nodes)
            if row[0] == 1.0:
                assert len(cycles) == 1 and len(cycles[0]) <= 6
            else:
                assert cycles == []

    def test_balanced(self):
        ds = gen_synthetic_dataset("has-small-cycle", 40, seed=6)
        assert ds.labels.sum() == 20


class TestRandomMultitask:
    def test_has_missing_and_observed(self):
        ds = gen_synthetic_dataset("random-multitask", 50, seed=7)
        assert np.isnan(ds.labels).any()
        assert (~np.isnan(ds.labels)).any()
        assert ds.manifest.num_tasks == 4

    def test_features_respect_manifest(self):
        ds = gen_synthetic_dataset("random-multitask", 30, seed=8)
        for g in ds.graphs:
            for f, card in enumerate(ds.manifest.node_field_cardinalities):
                assert g.node_feats[:, f].max() < card

    def test_deterministic(self):
        a = gen_synthetic_dataset("random-multitask", 25, seed=9)
        b = gen_synthetic_dataset("random-multitask", 25, seed=9)
        np.testing.assert_array_equal(np.nan_to_num(a.labels), np.nan_to_num(b.labels))


class TestHelpers:
    def test_random_tree_is_tree(self):
        rng = np.random.default_rng(10)
        g = random_tree(15, rng)
        assert g.num_edges == 14
        assert enumerate_simple_cycles(g, 15) == []

    def test_unicyclic_has_one_cycle(self):
        rng = np.random.default_rng(11)
        g = random_unicyclic(12, 5, rng)
        cycles = enumerate_simple_cycles(g, 12)
        assert len(cycles) == 1 and len(cycles[0]) == 5

    def test_unknown_task_spec(self):
        with pytest.raises(ValueError, match="unknown task spec"):
            gen_synthetic_dataset("nope", 5, seed=0)

    def test_size_must_be_positive(self):
        with pytest.raises(ValueError):
            gen_synthetic_dataset("min-cycle-class", 0, seed=0)
