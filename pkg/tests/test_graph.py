import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quorum_ra.errors import (
    DuplicateEdge,
    GraphFileError,
    NodeOutOfRange,
    NonPositiveWeight,
    NotStronglyConnected,
    SelfLoop,
)
from quorum_ra.graph import (
    Digraph,
    build_digraph,
    is_strongly_connected,
    laplacian,
    left_eigenvector,
    metropolis_weights,
    random_strongly_connected,
    read_graph,
    write_graph,
)


def test_edges_are_one_based_and_round_trip():
    g = build_digraph(3, [(1, 2, 0.5), (2, 3, 0.25), (3, 1, 1.0)])
    assert g.weights[1, 0] == 0.5  # node 2 hears node 1
    assert g.edges() == [(1, 2, 0.5), (2, 3, 0.25), (3, 1, 1.0)]
    assert build_digraph(3, g.edges()) == g


@pytest.mark.parametrize("edges,err", [
    ([(1, 1, 1.0)], SelfLoop),
    ([(1, 2, 0.0)], NonPositiveWeight),
    ([(1, 2, -1.0)], NonPositiveWeight),
    ([(1, 2, 1.0), (1, 2, 2.0)], DuplicateEdge),
    ([(0, 2, 1.0)], NodeOutOfRange),
    ([(1, 4, 1.0)], NodeOutOfRange),
])
def test_bad_edges(edges, err):
    with pytest.raises(err):
        build_digraph(3, edges)


def test_weights_are_read_only():
    g = build_digraph(2, [(1, 2, 1.0), (2, 1, 1.0)])
    with pytest.raises(ValueError):
        g.weights[0, 1] = 3.0


def test_connectivity():
    cycle = build_digraph(4, [(1, 2, 1), (2, 3, 1), (3, 4, 1), (4, 1, 1)])
    path = build_digraph(4, [(1, 2, 1), (2, 3, 1), (3, 4, 1)])
    assert is_strongly_connected(cycle)
    assert not is_strongly_connected(path)


def test_laplacian_rows_sum_to_zero():
    g = random_strongly_connected(9, 0.3, 1)
    lap = laplacian(g)
    assert np.allclose(lap.L.sum(axis=1), 0, atol=1e-15)
    assert np.allclose(np.diag(lap.L), lap.degrees)


def test_metropolis_weights():
    g = metropolis_weights(3, [(1, 2), (2, 3), (3, 1), (1, 3)])
    # node 3 hears nodes 1 and 2: two in-neighbours, each weighted 1/3
    assert np.allclose(g.weights[2], [1 / 3, 1 / 3, 0])
    assert np.allclose(g.weights[0], [0, 0, 1 / 2])
    assert laplacian(g).max_degree < 1
    with pytest.raises(NotStronglyConnected, match="Assumption 1"):
        metropolis_weights(3, [(1, 2), (2, 3)])


def test_left_eigenvector_two_nodes():
    # L = [[a, -a], [-b, b]] has omega = (b, a) / (a + b)
    g = build_digraph(2, [(2, 1, 1.0), (1, 2, 3.0)])
    ev = left_eigenvector(laplacian(g))
    assert np.allclose(ev.omega, [0.75, 0.25], atol=1e-14)
    assert ev.residual < 1e-14


def test_left_eigenvector_uniform_on_balanced_cycle():
    g = build_digraph(3, [(1, 2, 0.4), (2, 3, 0.4), (3, 1, 0.4)])
    assert np.allclose(left_eigenvector(laplacian(g)).omega, 1 / 3, atol=1e-14)


def test_left_eigenvector_rejects_disconnected():
    g = Digraph(4, np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], float))
    with pytest.raises(NotStronglyConnected):
        left_eigenvector(laplacian(g))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 25), st.floats(0, 0.5), st.integers(0, 10**6))
def test_generated_graphs_are_valid(n, p, seed):
    g = random_strongly_connected(n, p, seed)
    assert is_strongly_connected(g)
    ev = left_eigenvector(laplacian(g))
    assert np.all(ev.omega > 0) and abs(ev.omega.sum() - 1) < 1e-12
    assert np.max(np.abs(ev.omega @ laplacian(g).L)) < 1e-12
    assert g == random_strongly_connected(n, p, seed)


def test_graph_file_round_trip(tmp_path):
    g = random_strongly_connected(8, 0.2, 5)
    path = tmp_path / "g.txt"
    write_graph(g, path)
    assert read_graph(path) == g


def test_unweighted_file_gets_metropolis_weights(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("# ring\nn 3\n1 2\n2 3  # comment\n3 1\n")
    g = read_graph(path)
    assert np.allclose(g.weights[1], [0.5, 0, 0])


@pytest.mark.parametrize("text", ["", "3\n1 2\n", "n 3\n1 2 0.5\n2 3\n", "n 3\n1 x\n",
                                  "n 3\n1 2 3 4\n"])
def test_malformed_files(tmp_path, text):
    path = tmp_path / "g.txt"
    path.write_text(text)
    with pytest.raises(GraphFileError):
        read_graph(path)
