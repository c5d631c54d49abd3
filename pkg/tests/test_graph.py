import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from conftest import directed_graphs, undirected_graphs
from copygraph.graph import (
    BipartiteGraph,
    Graph,
    GraphFormatError,
    NodeLabels,
    degree,
    largest_connected_component,
    load_edge_list,
    load_features,
    load_interactions,
    load_labels,
    symmetrize,
    write_edge_list,
    write_features,
    write_interactions,
    write_labels,
)


def write(tmp_path, text, name="g.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_undirected_pairs(tmp_path):
    g = load_edge_list(write(tmp_path, "0 1\n1 2"))
    assert not g.directed
    assert sorted(zip(*g.adj.nonzero())) == [(0, 1), (1, 0), (1, 2), (2, 1)]


def test_load_empty_file(tmp_path):
    g = load_edge_list(write(tmp_path, ""))
    assert g.n_nodes == 0 and g.n_edges == 0
    assert load_edge_list(write(tmp_path, ""), n_nodes=4).n_nodes == 4


def test_load_weight(tmp_path):
    g = load_edge_list(write(tmp_path, "0 1 2.5\n"))
    assert g.adj[0, 1] == 2.5 and g.adj[1, 0] == 2.5


def test_header_and_comments(tmp_path):
    g = load_edge_list(write(tmp_path, "# comment\n%nodes 6\n0 1\n"))
    assert g.n_nodes == 6


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("0 1\n1 0\n", "duplicate"),
        ("0 1\n0 x\n", r"g\.txt:2:"),
        ("0 1 -1\n", "positive"),
        ("0 1 0\n", "positive"),
        ("%nodes 2\n0 5\n", "out of range"),
        ("0 1 2 3\n", "expected"),
    ],
)
def test_load_errors(tmp_path, text, fragment):
    with pytest.raises(GraphFormatError, match=fragment):
        load_edge_list(write(tmp_path, text))


def test_directed_duplicate_allowed_reverse(tmp_path):
    g = load_edge_list(write(tmp_path, "0 1\n1 0\n"), directed=True)
    assert g.n_edges == 2


def test_symmetrize_examples():
    g = symmetrize(Graph.from_edges(2, [(0, 1, 1.0)], directed=True))
    assert g.edges() == [(0, 1, 1.0)] and g.adj[1, 0] == 1.0
    g = symmetrize(Graph.from_edges(2, [(0, 1, 2.0), (1, 0, 3.0)], directed=True))
    assert g.adj[0, 1] == 3.0 and g.adj[1, 0] == 3.0
    sym = Graph.from_edges(3, [(0, 1), (1, 2)])
    assert symmetrize(sym) == sym


@given(directed_graphs())
def test_symmetrize_idempotent_and_relabel(g):
    s = symmetrize(g)
    assert symmetrize(s) == s
    perm = np.random.default_rng(g.n_nodes).permutation(g.n_nodes)
    p = sp.identity(g.n_nodes, format="csr")[perm]
    relabeled = Graph(p @ g.adj @ p.T, directed=True)
    assert symmetrize(relabeled) == Graph(p @ s.adj @ p.T, directed=False)


def test_degree_examples(star):
    assert degree(star, 0) == 3
    assert degree(Graph.from_edges(3, [(0, 1)]), 2) == 0
    chain = Graph.from_edges(3, [(0, 1), (1, 2)], directed=True)
    assert degree(chain, 1, "out") == 1 and degree(chain, 1, "in") == 1 and degree(chain, 1, "total") == 2
    with pytest.raises(IndexError):
        degree(star, 7)


@given(undirected_graphs())
def test_degree_modes_coincide_undirected(g):
    for v in range(g.n_nodes):
        assert degree(g, v, "in") == degree(g, v, "out") == degree(g, v, "total")


@given(directed_graphs())
def test_out_degree_sum_directed(g):
    assert g.out_degrees().sum() == g.n_edges


@given(undirected_graphs())
def test_out_degree_sum_undirected(g):
    assert g.out_degrees().sum() == 2 * g.n_edges


def test_lcc_connected_identity(triangle):
    sub, remap = largest_connected_component(triangle)
    assert sub == triangle
    assert remap.tolist() == [0, 1, 2]


def test_lcc_picks_larger_component():
    g = Graph.from_edges(5, [(0, 1), (2, 3), (3, 4)])
    sub, remap = largest_connected_component(g)
    assert sub.n_nodes == 3
    assert remap.tolist() == [-1, -1, 0, 1, 2]


def test_lcc_tie_smallest_id():
    g = Graph.from_edges(4, [(2, 3), (0, 1)])
    _, remap = largest_connected_component(g)
    assert remap.tolist() == [0, 1, -1, -1]


def test_lcc_empty_graph_error():
    with pytest.raises(ValueError):
        largest_connected_component(Graph.empty(0))


@given(st.one_of(undirected_graphs(), directed_graphs()))
def test_edge_list_round_trip(tmp_path_factory, g):
    path = tmp_path_factory.mktemp("rt") / "g.txt"
    write_edge_list(g, path)
    first = path.read_bytes()
    back = load_edge_list(path, directed=g.directed)
    assert back == g
    write_edge_list(back, path)
    assert path.read_bytes() == first


def test_weighted_round_trip(tmp_path):
    g = Graph.from_edges(3, [(0, 1, 0.1), (1, 2, 1 / 3)])
    write_edge_list(g, tmp_path / "w.txt")
    assert load_edge_list(tmp_path / "w.txt") == g


def test_labels_round_trip(tmp_path):
    labels = NodeLabels.from_array([0, 2, -1, 1])
    write_labels(labels, tmp_path / "l.csv")
    back = load_labels(tmp_path / "l.csv", n_nodes=4)
    assert back.labels.tolist() == [0, 2, -1, 1]
    assert not back.is_complete


def test_features_round_trip(tmp_path):
    dense = np.array([[0.5, 0.0], [1.0, 2.0]])
    write_features(dense, tmp_path / "d.csv")
    assert np.array_equal(load_features(tmp_path / "d.csv"), dense)
    sparse = sp.csr_matrix(dense)
    write_features(sparse, tmp_path / "s.csv")
    back = load_features(tmp_path / "s.csv")
    assert sp.issparse(back) and np.array_equal(back.toarray(), dense)


def test_interactions_round_trip(tmp_path):
    pairs = [(0, 1), (1, 0), (2, 3)]
    write_interactions(pairs, tmp_path / "i.tsv")
    back, nu, ni = load_interactions(tmp_path / "i.tsv")
    assert back == pairs and (nu, ni) == (3, 4)


def test_bipartite_invariants():
    bg = BipartiteGraph.from_pairs(2, 3, [(0, 0), (1, 2)])
    assert bg.n_interactions == 2
    with pytest.raises(ValueError):
        BipartiteGraph.from_pairs(2, 3, [(0, 0), (0, 0)])
    with pytest.raises(ValueError):
        BipartiteGraph.from_pairs(2, 3, [(2, 0)])
    g = bg.to_graph()
    assert g.n_nodes == 5 and g.adj[0, 2] == 1 and g.adj[1, 4] == 1
    assert BipartiteGraph.from_graph(g, 2).pairs() == bg.pairs()


def test_graph_validation():
    with pytest.raises(ValueError):
        Graph(sp.csr_matrix(np.array([[0, 1], [0, 0]])), directed=False)
    with pytest.raises(ValueError):
        Graph(sp.csr_matrix(np.array([[0, -1], [-1, 0]])))
