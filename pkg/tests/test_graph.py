import numpy as np
import pytest

from hetrinet.graph import (
    GraphInputError,
    NodeId,
    NodeType,
    Triplet,
    build_graph,
    build_pair_index,
    neighbor_pairs,
)

D, T_, S = NodeType.DRUG, NodeType.TARGET, NodeType.DISEASE


def pair_set(ps):
    return {(a.index, b.index) for a, b in ps.pairs}


def test_single_triplet_closure():
    g = build_graph([(0, 0, 0)])
    assert g.dt_edges == {(0, 0)}
    assert g.ds_edges == {(0, 0)}
    assert g.triplets == (Triplet(0, 0, 0),)


def test_empty_graph_is_valid():
    g = build_graph([])
    assert g.n_nodes == 0
    assert len(g.dt_edges) == len(g.ds_edges) == 0
    assert len(build_pair_index(g)) == 0


def test_edge_counts_by_hand():
    g = build_graph([(0, 0, 0), (0, 1, 0)])
    assert len(g.dt_edges) == 2
    assert len(g.ds_edges) == 1


def test_duplicate_triplets_collapse():
    g = build_graph([(0, 0, 0), (0, 0, 0), Triplet(0, 0, 0, 1)])
    assert len(g.triplets) == 1


def test_out_of_range_index_rejected():
    with pytest.raises(GraphInputError):
        build_graph([(0, 3, 0)], n_drugs=1, n_targets=2, n_diseases=1)
    with pytest.raises(GraphInputError):
        build_graph([(0, 0, 0)], extra_ds_edges=[(0, 5)], n_diseases=2)


def test_extra_edges_join_the_graph():
    g = build_graph([(0, 0, 0)], extra_dt_edges=[(1, 0)], extra_ds_edges=[(1, 1)])
    assert g.n_drugs == 2 and g.n_diseases == 2
    assert pair_set(neighbor_pairs(g, NodeId(D, 1))) == {(0, 1)}


def test_drug_center_cross_product():
    g = build_graph([(0, 0, 0), (0, 1, 0)])
    assert pair_set(neighbor_pairs(g, NodeId(D, 0))) == {(0, 0), (1, 0)}


def test_isolated_node_has_no_pairs():
    g = build_graph([(0, 0, 0)], n_drugs=2)
    assert len(neighbor_pairs(g, NodeId(D, 1))) == 0


def test_target_center_wedge():
    # t0 touches d0 only; d0 reaches diseases s0 and s1
    g = build_graph([(0, 0, 0)], extra_ds_edges=[(0, 1)])
    ps = neighbor_pairs(g, NodeId(T_, 0))
    assert pair_set(ps) == {(0, 0), (0, 1)}
    assert all(a.kind == D and b.kind == S for a, b in ps.pairs)


def test_disease_center_members_are_drug_then_target():
    g = build_graph([(0, 0, 0), (1, 2, 0)])
    ps = neighbor_pairs(g, NodeId(S, 0))
    assert pair_set(ps) == {(0, 0), (1, 2)}
    assert all(a.kind == D and b.kind == T_ for a, b in ps.pairs)


def _random_graph(seed, n=(6, 5, 4), m=25):
    r = np.random.default_rng(seed)
    trip = [tuple(int(r.integers(k)) for k in n) for _ in range(m)]
    return build_graph(trip, n_drugs=n[0], n_targets=n[1], n_diseases=n[2])


@pytest.mark.parametrize("seed", range(5))
def test_every_triplet_is_a_pair_of_each_member(seed):
    g = _random_graph(seed)
    for t in g.triplets:
        assert (t.target, t.disease) in pair_set(neighbor_pairs(g, NodeId(D, t.drug), cap=None))
        assert (t.drug, t.disease) in pair_set(neighbor_pairs(g, NodeId(T_, t.target), cap=None))
        assert (t.drug, t.target) in pair_set(neighbor_pairs(g, NodeId(S, t.disease), cap=None))


@pytest.mark.parametrize("seed", range(5))
def test_drug_pair_count_is_degree_product(seed):
    g = _random_graph(seed)
    for d in range(g.n_drugs):
        expect = len(g.drug_targets[d]) * len(g.drug_diseases[d])
        assert len(neighbor_pairs(g, NodeId(D, d), cap=None)) == expect


def test_wedge_rule_matches_brute_force():
    g = _random_graph(11)
    for t in range(g.n_targets):
        expect = {(d, s) for d, tt in g.dt_edges if tt == t for dd, s in g.ds_edges if dd == d}
        assert pair_set(neighbor_pairs(g, NodeId(T_, t), cap=None)) == expect
    for s in range(g.n_diseases):
        expect = {(d, t) for d, ss in g.ds_edges if ss == s for dd, t in g.dt_edges if dd == d}
        assert pair_set(neighbor_pairs(g, NodeId(S, s), cap=None)) == expect


def test_cap_subsamples_deterministically():
    g = build_graph([(0, t, s) for t in range(10) for s in range(8)])
    full = pair_set(neighbor_pairs(g, NodeId(D, 0), cap=None))
    a = neighbor_pairs(g, NodeId(D, 0), cap=16, rng_seed=3)
    b = neighbor_pairs(g, NodeId(D, 0), cap=16, rng_seed=3)
    c = neighbor_pairs(g, NodeId(D, 0), cap=16, rng_seed=4)
    assert len(a) == 16 and len(set(a.pairs)) == 16
    assert a == b
    assert pair_set(a) <= full
    assert pair_set(a) != pair_set(c)
    with pytest.raises(ValueError):
        neighbor_pairs(g, NodeId(D, 0), cap=0)


def test_cap_sampling_is_roughly_uniform():
    g = build_graph([(0, t, 0) for t in range(20)])
    hits = np.zeros(20)
    for seed in range(2000):
        for (t, _), in [((a.index, b.index),) for a, b in neighbor_pairs(g, NodeId(D, 0), cap=5, rng_seed=seed).pairs]:
            hits[t] += 1
    # each pair is kept with probability 1/4
    assert np.all(np.abs(hits / 2000 - 0.25) < 0.04)


def test_center_out_of_range():
    g = build_graph([(0, 0, 0)])
    with pytest.raises(GraphInputError):
        neighbor_pairs(g, NodeId(T_, 4))


def test_pair_index_matches_neighbor_pairs():
    g = _random_graph(2)
    idx = build_pair_index(g, cap=3, rng_seed=9)
    for kind in NodeType:
        others = [k for k in NodeType if k != kind]
        for i in range(g.counts[kind]):
            rows = idx.center == g.global_index(NodeId(kind, i))
            got = set(zip(idx.j[rows] - g.offset(others[0]), idx.k[rows] - g.offset(others[1])))
            assert got == pair_set(neighbor_pairs(g, NodeId(kind, i), cap=3, rng_seed=9))
    assert np.all(np.diff(idx.center) >= 0)
