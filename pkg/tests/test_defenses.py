import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnn_inversion.data import generate_sbm
from gnn_inversion.defenses import PerturbConfig, add_similar_edges, apply_defense, flip, flip_epsilon, rewire
from gnn_inversion.graph import Graph


def ring(n, features=None):
    A = np.zeros((n, n))
    idx = np.arange(n)
    A[idx, (idx + 1) % n] = 1
    A = np.maximum(A, A.T)
    X = features if features is not None else np.random.default_rng(n).standard_normal((n, 3))
    return Graph(X, np.zeros(n, dtype=int), A, 1, "ring")


def test_rewire_p0_is_identity(sbm):
    np.testing.assert_array_equal(rewire(sbm, 0.0, seed=1).adjacency, sbm.adjacency)


def test_rewire_triangle_p1_drops_all():
    # every replacement target is already adjacent, so each edge is eventually dropped
    tri = ring(3)
    out = rewire(tri, 1.0, seed=0)
    assert out.num_edges < tri.num_edges


def test_rewire_fraction_matches_p():
    g = ring(400)
    p = 0.3
    moved = []
    for seed in range(5):
        out = rewire(g, p, seed)
        kept = sum(out.adjacency[i, j] for i, j in g.edges())
        moved.append(g.num_edges - kept)
    m = g.num_edges * 5
    frac = sum(moved) / m
    assert abs(frac - p) < 3 * math.sqrt(p * (1 - p) / m) + 0.005


@settings(max_examples=15)
@given(st.floats(0, 1), st.integers(0, 1000))
def test_rewire_never_adds_edges(p, seed):
    g = generate_sbm(2, 8, 0.6, 0.1, 1.0, seed=seed % 7)
    out = rewire(g, p, seed)
    assert out.num_edges <= g.num_edges
    np.testing.assert_array_equal(out.adjacency, out.adjacency.T)
    assert not np.diag(out.adjacency).any()


def test_rewire_rejects_tiny_graph():
    g = Graph(np.ones((2, 1)), np.zeros(2, int), np.array([[0.0, 1], [1, 0]]))
    with pytest.raises(ValueError):
        rewire(g, 0.5)


def test_add_similar_budget_zero(sbm):
    np.testing.assert_array_equal(add_similar_edges(sbm, 0.0).adjacency, sbm.adjacency)


def test_add_similar_prefers_duplicates():
    X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [-1.0, 0.1]])
    A = np.zeros((5, 5))
    A[2, 3] = A[3, 2] = 1
    A[0, 4] = A[4, 0] = 1
    g = Graph(X, np.zeros(5, int), A, 1)
    out = add_similar_edges(g, 0.5)
    assert out.num_edges == 3
    assert out.adjacency[0, 1] == 1


def test_add_similar_count_and_supergraph(sbm):
    out = add_similar_edges(sbm, 0.3, seed=2)
    assert out.num_edges == sbm.num_edges + math.floor(0.3 * sbm.num_edges)
    assert np.all(out.adjacency >= sbm.adjacency)


def test_add_similar_rejects_featureless():
    g = ring(6, features=np.eye(6))
    with pytest.raises(ValueError, match="features"):
        add_similar_edges(g, 0.5)
    with pytest.raises(ValueError):
        add_similar_edges(ring(6, features=np.zeros((6, 2))), 0.5)


def test_add_similar_budget_too_large():
    A = np.ones((3, 3)) - np.eye(3)
    A[0, 1] = A[1, 0] = 0
    g = Graph(np.random.default_rng(0).standard_normal((3, 2)), np.zeros(3, int), A)
    with pytest.raises(ValueError, match="exceeds"):
        add_similar_edges(g, 1.0)


def test_flip_epsilon_examples():
    assert flip_epsilon(1.0) == 0.0
    assert flip_epsilon(0.5) == pytest.approx(math.log(3))
    assert flip_epsilon(0.2) == pytest.approx(math.log(9))
    with pytest.raises(ValueError):
        flip_epsilon(0.0)
    with pytest.raises(ValueError):
        flip(ring(5), 0.0)


def test_flip_hamming_distance():
    g = generate_sbm(2, 40, 0.3, 0.05, 1.0, seed=0)
    n = g.num_nodes * (g.num_nodes - 1) // 2
    p = 0.4
    iu = np.triu_indices(g.num_nodes, 1)
    dist = [np.sum(flip(g, p, s)[0].adjacency[iu] != g.adjacency[iu]) for s in range(5)]
    mean = np.mean(dist)
    sd = math.sqrt(n * (p / 2) * (1 - p / 2) / 5)
    assert abs(mean - p / 2 * n) < 3 * sd


def test_flip_output_valid(sbm):
    out, eps = flip(sbm, 0.6, seed=3)
    np.testing.assert_array_equal(out.adjacency, out.adjacency.T)
    assert not np.diag(out.adjacency).any()
    assert eps == pytest.approx(math.log(2 / 0.6 - 1))


def test_apply_defense_dispatch(sbm):
    g, eps = apply_defense(sbm, PerturbConfig("flip", 0.5, seed=1))
    np.testing.assert_array_equal(g.adjacency, flip(sbm, 0.5, 1)[0].adjacency)
    assert eps == pytest.approx(math.log(3))
    assert apply_defense(sbm, PerturbConfig("rewire", 0.5))[1] is None
    with pytest.raises(ValueError):
        PerturbConfig("shuffle", 0.5)
    with pytest.raises(ValueError):
        PerturbConfig("flip", 1.5)


def test_defenses_deterministic(sbm):
    np.testing.assert_array_equal(rewire(sbm, 0.4, 9).adjacency, rewire(sbm, 0.4, 9).adjacency)
    np.testing.assert_array_equal(flip(sbm, 0.4, 9)[0].adjacency, flip(sbm, 0.4, 9)[0].adjacency)
