import json
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from schrodnet.netgraph import CircularNetwork, build_cmn, criticality_check, line_graph

odd_n = st.sampled_from([5, 7, 9, 11, 13, 15, 17])


def brute_line_graph(edges):
    """Pairs of edge indices sharing an endpoint, by exhaustive comparison."""
    return {(i, j) for i, j in combinations(range(len(edges)), 2) if set(edges[i]) & set(edges[j])}


@pytest.mark.parametrize("n, m, n_interior", [(5, 2, 5), (7, 3, 8), (9, 4, 18), (17, 8, 68)])
def test_cmn_counts(n, m, n_interior):
    G = build_cmn(n)
    assert G.m == m
    assert G.n_edges == n * (n - 1) // 2
    assert len(G.interior) == n_interior
    assert np.bincount(G.layers).tolist()[1:] == [n] * m


def test_c37_center_node():
    G = build_cmn(7)
    inner = G.edges[G.layers == 3]
    assert np.all(inner[:, 1] == G.n_nodes - 1)
    assert G.degrees()[-1] == 7


def test_c25_layers():
    G = build_cmn(5)
    assert G.kinds[:5] == ("radial",) * 5 and G.kinds[5:] == ("angular",) * 5


@pytest.mark.parametrize("n", [4, 6, 3, 1])
def test_cmn_rejects_bad_n(n):
    with pytest.raises(ValueError):
        build_cmn(n)


@given(odd_n)
def test_cmn_structure(n):
    G = build_cmn(n)
    deg = G.degrees()
    assert np.all(deg[G.boundary] == 1)
    assert np.all(deg[G.interior] >= 2)
    assert G.interior_connected()
    assert np.all(G.edges[:, 0] < G.edges[:, 1])
    r = G.coords[:, 0]
    assert np.all(r[G.boundary] == 1) and np.all(r[G.interior] < 1)


@given(odd_n, st.integers(1, 16))
def test_rotation_is_layer_preserving_permutation(n, shift):
    G = build_cmn(n)
    p = G.rotation(shift)
    assert sorted(p) == list(range(G.n_edges))
    assert np.array_equal(G.layers[p], G.layers)
    assert np.array_equal(G.rotation(n), np.arange(G.n_edges))


def test_line_graph_small_identities():
    tri = CircularNetwork.from_edges(3, [(0, 1), (1, 2), (0, 2)], [0, 1, 2])
    assert line_graph(tri).edges.tolist() == [[0, 1], [0, 2], [1, 2]]
    star = CircularNetwork.from_edges(4, [(0, 3), (1, 3), (2, 3)], [0, 1, 2])
    assert len(line_graph(star).edges) == 3
    path = CircularNetwork.from_edges(3, [(0, 1), (1, 2)], [0, 2])
    assert line_graph(path).edges.tolist() == [[0, 1]]


@given(odd_n)
def test_line_graph_matches_bruteforce(n):
    G = build_cmn(n)
    L = line_graph(G)
    assert L.n_nodes == G.n_edges
    assert {tuple(e) for e in L.edges} == brute_line_graph(G.edges.tolist())
    # each base node of degree d contributes d(d-1)/2 line edges
    d = G.degrees()
    assert len(L.edges) == int((d * (d - 1) // 2).sum())


@pytest.mark.parametrize("n", [5, 7, 9, 11])
def test_cmn_is_critical(n):
    assert criticality_check(build_cmn(n))


def test_deleting_edge_breaks_criticality():
    G = build_cmn(7)
    assert not criticality_check(G.without_edge(G.n_edges - 1))


def test_pendant_interior_node_not_critical():
    G = build_cmn(5)
    # swap one angular edge for a pendant edge to a new interior node
    edges = np.vstack([G.edges[:-1], [[5, G.n_nodes]]])
    H = CircularNetwork.from_edges(G.n_nodes + 1, edges, G.boundary)
    assert H.n_edges == G.n_edges
    assert not criticality_check(H)


def test_from_edges_validation():
    with pytest.raises(ValueError):
        CircularNetwork.from_edges(2, [(0, 0)], [0])
    with pytest.raises(ValueError):
        CircularNetwork.from_edges(2, [(0, 1), (1, 0)], [0])


def test_to_json(tmp_path):
    G = build_cmn(5)
    G.to_json(tmp_path / "g.json")
    d = json.loads((tmp_path / "g.json").read_text())
    assert d["n"] == 5 and len(d["edges"]) == 10 and len(d["nodes"]) == G.n_nodes
    assert {e["kind"] for e in d["edges"]} == {"radial", "angular"}
