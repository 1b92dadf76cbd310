import numpy as np
import pytest

from gmamba.errors import ConfigError
from gmamba.graph import graphs_equal, node_degrees
from gmamba.synth import (SynthSpec, label_balance, make_longrange_dataset,
                          max_label_distance)


def test_determinism_under_seed():
    a = make_longrange_dataset(SynthSpec(num_graphs=10), seed=42)
    b = make_longrange_dataset(SynthSpec(num_graphs=10), seed=42)
    assert all(graphs_equal(x, y) for x, y in zip(a, b))


def test_different_seeds_differ():
    a = make_longrange_dataset(SynthSpec(num_graphs=3), seed=1)
    b = make_longrange_dataset(SynthSpec(num_graphs=3), seed=2)
    assert not all(graphs_equal(x, y) for x, y in zip(a, b))


def test_flag_distance_at_least_min_dist():
    spec = SynthSpec(num_graphs=30, min_dist=6, max_dist=10)
    for g in make_longrange_dataset(spec, seed=0):
        assert max_label_distance(g) >= 6


def test_d1_control_is_adjacent():
    spec = SynthSpec(num_graphs=10, min_dist=1, max_dist=1)
    for g in make_longrange_dataset(spec, seed=0):
        assert max_label_distance(g) == 1


def test_label_balance():
    graphs = make_longrange_dataset(SynthSpec(num_graphs=1000), seed=5)
    assert 0.45 <= label_balance(graphs) <= 0.55


def test_labels_live_on_query_only():
    for g in make_longrange_dataset(SynthSpec(num_graphs=5), seed=1):
        lab = np.asarray(g.label)
        labeled = np.where(lab >= 0)[0]
        assert len(labeled) == 1
        assert g.node_feat[labeled[0], 1] == 1.0  # the query flag


def test_label_matches_color_equality():
    for g in make_longrange_dataset(SynthSpec(num_graphs=40), seed=9):
        lab = np.asarray(g.label)
        query = int(np.where(lab >= 0)[0][0])
        key = int(np.argmax(g.node_feat[:, 0]))
        same = np.array_equal(g.node_feat[key, 2:], g.node_feat[query, 2:])
        assert bool(lab[query]) == same


def test_query_has_strictly_largest_degree():
    spec = SynthSpec(num_graphs=20, query_leaves=2)
    for g in make_longrange_dataset(spec, seed=3):
        deg = node_degrees(g)
        query = int(np.argmax(g.node_feat[:, 1]))
        others = np.delete(deg, query)
        assert deg[query] > others.max()


def test_undirected_storage_both_directions():
    g = make_longrange_dataset(SynthSpec(num_graphs=1), seed=0)[0]
    edge_set = {(int(a), int(b)) for a, b in g.edges}
    assert all((b, a) in edge_set for a, b in edge_set)


def test_ring_kind():
    spec = SynthSpec(num_graphs=10, kind="ring", min_dist=4, max_dist=6,
                     query_leaves=1)
    for g in make_longrange_dataset(spec, seed=2):
        assert max_label_distance(g) >= 4


def test_bad_spec_rejected():
    with pytest.raises(ConfigError):
        SynthSpec(kind="tree")
    with pytest.raises(ConfigError):
        SynthSpec(min_dist=5, max_dist=3)
