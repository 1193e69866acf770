import itertools
import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qnet import graphs
from qnet.errors import InvalidArgument, UndefinedCorrelation
from qnet.graphs import DEGENERATE, UNREACHABLE, Graph


def ring(n):
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


# -- construction ------------------------------------------------------------

@pytest.mark.parametrize("n,edges", [(10, 45), (2, 1), (16, 120)])
def test_complete_graph_edge_count(n, edges):
    assert graphs.complete_graph(n).n_edges == edges


def test_complete_graph_two_nodes_is_single_edge():
    assert graphs.complete_graph(2).sorted_edges() == [(0, 1)]


def test_complete_graph_rejects_small_n():
    with pytest.raises(InvalidArgument):
        graphs.complete_graph(1)


def test_graph_rejects_self_loops_and_duplicates():
    with pytest.raises(InvalidArgument):
        Graph.from_edges(3, [(1, 1)])
    with pytest.raises(InvalidArgument):
        Graph.from_edges(3, [(0, 1), (1, 0)])


def test_random_removal_extremes_and_determinism():
    assert graphs.random_removal_graph(10, 0, 1).n_edges == 45
    assert graphs.random_removal_graph(10, 45, 1).n_edges == 0
    a = graphs.random_removal_graph(10, 1, np.random.default_rng(7))
    b = graphs.random_removal_graph(10, 1, np.random.default_rng(7))
    assert a.n_edges == 44
    assert a.edges == b.edges


@pytest.mark.parametrize("n_r", [-1, 46])
def test_random_removal_range(n_r):
    with pytest.raises(InvalidArgument):
        graphs.random_removal_graph(10, n_r, 0)


def test_ws_ring_cycle():
    g = graphs.watts_strogatz_graph(10, 1, 0.0, 0)
    assert g.n_edges == 10
    assert set(g.degrees()) == {2}


def test_ws_half_ring_is_complete():
    assert graphs.watts_strogatz_graph(10, 5, 0.0, 0).edges == graphs.complete_graph(10).edges


def test_ws_k2_lattice():
    g = graphs.watts_strogatz_graph(10, 2, 0.0, 0)
    assert g.n_edges == 20
    assert set(g.degrees()) == {4}


@pytest.mark.parametrize("n,k,p", [(2, 1, 0.5), (10, 0, 0.5), (10, 6, 0.5), (11, 6, 0.5), (10, 2, 1.5)])
def test_ws_parameter_range(n, k, p):
    with pytest.raises(InvalidArgument):
        graphs.watts_strogatz_graph(n, k, p, 0)


@given(n=st.integers(3, 20), data=st.data(), seed=st.integers(0, 2**32 - 1))
def test_ws_invariants(n, data, seed):
    k = data.draw(st.integers(1, graphs.max_ws_k(n)))
    p = data.draw(st.floats(0, 1))
    g = graphs.watts_strogatz_graph(n, k, p, seed)
    a = g.adjacency()
    assert np.array_equal(a, a.T) and not a.diagonal().any()
    assert set(np.unique(a)) <= {0, 1}
    if p == 0:
        expected = n * (n - 1) // 2 if 2 * k == n else n * k
        assert g.n_edges == expected
    # rewiring only moves edges
    lattice = graphs.watts_strogatz_graph(n, k, 0.0, seed)
    assert g.n_edges == lattice.n_edges
    assert g.edges == graphs.watts_strogatz_graph(n, k, p, seed).edges


@given(n=st.integers(2, 16), data=st.data(), seed=st.integers(0, 2**32 - 1))
def test_random_removal_edge_count(n, data, seed):
    n_r = data.draw(st.integers(0, n * (n - 1) // 2))
    g = graphs.random_removal_graph(n, n_r, seed)
    assert g.n_edges == n * (n - 1) // 2 - n_r
    assert all(0 <= i < j < n for i, j in g.edges)


def test_generated_graphs_are_simple_bulk():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        n = int(rng.integers(3, 17))
        if rng.random() < 0.5:
            g = graphs.random_removal_graph(n, int(rng.integers(0, n * (n - 1) // 2 + 1)), rng)
        else:
            g = graphs.watts_strogatz_graph(n, int(rng.integers(1, graphs.max_ws_k(n) + 1)), float(rng.random()), rng)
        assert all(i < j for i, j in g.edges)
        assert len(g.edges) == len(set(g.edges))


# -- distances and sinks -----------------------------------------------------

def test_bfs_examples():
    assert graphs.bfs_distances(graphs.complete_graph(10), 0) == [0] + [1] * 9
    d = graphs.bfs_distances(ring(10), 0)
    assert max(d) == 5 and d.index(5) == 5
    assert graphs.bfs_distances(Graph(3, frozenset()), 0) == [0, UNREACHABLE, UNREACHABLE]


def test_select_sink_examples():
    assert graphs.select_sink(ring(10), 0) == 5
    assert graphs.select_sink(graphs.complete_graph(10), 0) == 1
    assert graphs.select_sink(Graph.from_edges(3, [(0, 1)]), 2) is DEGENERATE


def test_select_sink_restricted_to_component():
    g = Graph.from_edges(5, [(0, 1), (1, 2), (3, 4)])
    assert graphs.select_sink(g, 0) == 2


@given(seed=st.integers(0, 2**32 - 1), n_r=st.integers(0, 30))
def test_select_sink_matches_networkx(seed, n_r):
    g = graphs.random_removal_graph(9, n_r, seed)
    lengths = nx.single_source_shortest_path_length(graphs._to_networkx(g), 0)
    far = max(lengths.values())
    sink = graphs.select_sink(g, 0)
    if far == 0:
        assert sink is DEGENERATE
    else:
        assert sink == min(v for v, d in lengths.items() if d == far)


def test_select_sink_order_preserving_relabel():
    # relabel by a monotone map into a larger node set: ties keep their order
    g = Graph.from_edges(5, [(0, 1), (0, 2), (1, 3), (2, 4)])
    perm = [0, 2, 3, 5, 6]
    big = Graph.from_edges(7, [(perm[i], perm[j]) for i, j in g.edges])
    assert graphs.select_sink(big, 0) == perm[graphs.select_sink(g, 0)]


def test_perfect_matching_removal():
    g = graphs.perfect_matching_removal(10, 0, 1)
    assert g.n_edges == 40
    removed = set(graphs.complete_graph(10).edges) - set(g.edges)
    assert removed == {(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)}
    g4 = graphs.perfect_matching_removal(4, 0, 2)
    assert set(graphs.complete_graph(4).edges) - set(g4.edges) == {(0, 2), (1, 3)}
    with pytest.raises(InvalidArgument):
        graphs.perfect_matching_removal(5, 0, 1)


# -- metrics -----------------------------------------------------------------

def test_metrics_complete_graph():
    m = graphs.compute_metrics(graphs.complete_graph(4))
    assert m.mean_clustering == pytest.approx(1.0)
    assert m.transitivity == pytest.approx(1.0)


def test_metrics_cycle():
    m = graphs.compute_metrics(ring(10))
    assert m.mean_clustering == 0.0
    assert np.allclose(m.betweenness, m.betweenness[0])


def test_metrics_star():
    star = Graph.from_edges(5, [(0, i) for i in range(1, 5)])
    m = graphs.compute_metrics(star)
    assert m.degree[0] == 4
    local = nx.clustering(graphs._to_networkx(star))
    assert all(local[v] == 0 for v in range(1, 5))


def test_metrics_invariants_and_networkx_agreement():
    g = graphs.watts_strogatz_graph(12, 3, 0.5, 4)
    m = graphs.compute_metrics(g)
    G = graphs._to_networkx(g)
    assert np.linalg.norm(m.eigenvector) == pytest.approx(1.0)
    assert np.all(m.eigenvector >= 0)
    ref = nx.eigenvector_centrality_numpy(G)
    assert np.allclose(m.eigenvector, [ref[v] for v in range(12)], atol=1e-8)
    hc = nx.harmonic_centrality(G)
    assert np.allclose(m.closeness, [hc[v] / 11 for v in range(12)])
    assert m.extra_clustering == pytest.approx(np.mean(list(nx.square_clustering(G).values())))


def test_isolated_node_closeness_zero():
    m = graphs.compute_metrics(Graph.from_edges(4, [(0, 1), (1, 2)]))
    assert m.closeness[3] == 0.0


def test_correlate_examples():
    x = np.arange(10.0)
    assert graphs.correlate(x, 2 * x + 1) == pytest.approx((1.0, 1.0))
    assert graphs.correlate(x, -x)[0] == pytest.approx(-1.0)
    pr, sr = graphs.correlate([1, 2, 3], [1, 4, 9])
    assert sr == pytest.approx(1.0) and pr < 1.0
    with pytest.raises(UndefinedCorrelation):
        graphs.correlate([1, 1, 1], [1, 2, 3])
    with pytest.raises(InvalidArgument):
        graphs.correlate([1, 2], [1, 2])


# -- serialization -----------------------------------------------------------

def test_edgelist_round_trip_is_one_based():
    g = graphs.watts_strogatz_graph(8, 2, 0.3, 2)
    text = g.to_edgelist()
    assert text.splitlines()[0] == "N 8"
    assert text.endswith("\n")
    assert all(1 <= int(v) <= 8 for line in text.splitlines()[1:] for v in line.split())
    assert Graph.from_edgelist(text) == g


def test_edgelist_parser_rejects_bad_input():
    with pytest.raises(InvalidArgument):
        Graph.from_edgelist("N 3\n1 2\n2 1\n")
    with pytest.raises(InvalidArgument):
        Graph.from_edgelist("N 3\n2 2\n")


def test_json_round_trip():
    g = graphs.random_removal_graph(6, 4, 9)
    doc = json.loads(g.to_json())
    assert doc["n_nodes"] == 6 and all(min(e) >= 1 for e in doc["edges"])
    assert Graph.from_json(g.to_json()) == g


def test_edge_count_convention():
    n = 10
    assert graphs.complete_graph(n).n_edges == len(list(itertools.combinations(range(n), 2)))
