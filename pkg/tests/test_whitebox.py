import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gnn_inversion.attacks import whitebox as wb
from gnn_inversion.attacks.whitebox import (UNKNOWN, GraphMiConfig, attack_loss, attack_loss_and_grad,
                                            gae_postprocess, known_labels, pgd_optimize, project, random_sample,
                                            run_graphmi, sample_edges)
from gnn_inversion.gcn import GcnModel, init_model, logits_numpy
from gnn_inversion.graph import AdjVector, DensityEstimate, density, matrix_to_vec, normalized_laplacian_smoothness
from test_autodiff import central_diff


def cross_entropy(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    return float(np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(labels)), labels]))


def test_attack_loss_term_isolation(sbm, sbm_model, rng):
    a = rng.random(sbm.num_nodes * (sbm.num_nodes - 1) // 2)
    X, Y = sbm.features, sbm.labels
    A = AdjVector(a, sbm.num_nodes).to_matrix()
    ce = cross_entropy(logits_numpy(sbm_model, A, X), Y)
    assert attack_loss(a, X, Y, sbm_model, 0, 0) == pytest.approx(ce, rel=1e-12)
    total = attack_loss(a, X, Y, sbm_model, 0.3, 0.2, degree_eps=1e-8)
    expected = ce + 0.3 * normalized_laplacian_smoothness(a, X, 1e-8) + 0.2 * np.linalg.norm(a)
    assert total == pytest.approx(expected, rel=1e-12)
    zero = np.zeros_like(a)
    assert attack_loss(zero, X, Y, sbm_model, 0, 1.0) == pytest.approx(attack_loss(zero, X, Y, sbm_model, 0, 0))


def test_attack_loss_ignores_unknown_labels(sbm, sbm_model):
    a = matrix_to_vec(sbm.adjacency).values
    Y = sbm.labels.copy()
    Y[::2] = UNKNOWN
    logits = logits_numpy(sbm_model, sbm.adjacency, sbm.features)
    known = Y != UNKNOWN
    assert attack_loss(a, sbm.features, Y, sbm_model, 0, 0) == pytest.approx(cross_entropy(logits[known], Y[known]))


def test_true_graph_loss_close_to_training_loss(sbm, sbm_model, sbm_split):
    tr, _, _ = sbm_split
    a = matrix_to_vec(sbm.adjacency).values
    Y = np.where(tr, sbm.labels, UNKNOWN)
    assert attack_loss(a, sbm.features, Y, sbm_model, 0, 0) < attack_loss(np.zeros_like(a), sbm.features, Y,
                                                                           sbm_model, 0, 0)


@pytest.mark.parametrize("n", [4, 5, 6])
def test_attack_gradient_matches_finite_differences(n, rng):
    X = rng.standard_normal((n, 3))
    Y = rng.integers(0, 2, n)
    model = init_model(3, 2, seed=n)
    a = rng.uniform(0.1, 0.9, n * (n - 1) // 2)
    _, g = attack_loss_and_grad(a, X, Y, model, 0.5, 0.1, 1.0)
    fd = central_diff(lambda v: attack_loss(v, X, Y, model, 0.5, 0.1, 1.0), a, h=1e-6)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=30))
def test_projection_idempotent(values):
    x = np.array(values)
    p = project(x)
    np.testing.assert_array_equal(project(p), p)
    assert p.min() >= 0 and p.max() <= 1


def test_pgd_zero_iterations(sbm, sbm_model):
    a = pgd_optimize(sbm_model, sbm.features, sbm.labels, GraphMiConfig(iterations=0))
    assert not a.values.any()


def test_pgd_first_step_is_clamped_negative_gradient(sbm, sbm_model):
    cfg = GraphMiConfig(iterations=1)
    a = pgd_optimize(sbm_model, sbm.features, sbm.labels, cfg)
    _, g = attack_loss_and_grad(np.zeros(len(a)), sbm.features, sbm.labels, sbm_model, cfg.alpha, cfg.beta,
                                cfg.degree_eps)
    np.testing.assert_allclose(a.values, np.clip(-cfg.lr * g, 0, 1))
    assert not a.values[g > 0].any()


def test_pgd_iterates_stay_in_box_and_loss_drops(sbm, sbm_model):
    seen = []
    trace = []
    pgd_optimize(sbm_model, sbm.features, sbm.labels, GraphMiConfig(iterations=30), trace=trace,
                 on_step=lambda t, a: seen.append((a.min(), a.max())))
    assert all(lo >= 0 and hi <= 1 for lo, hi in seen)
    assert trace[-1] < trace[0]


def test_pgd_aborts_on_non_finite_gradient(sbm, sbm_model, monkeypatch):
    def bad(values, *args):
        g = np.zeros_like(values)
        g[0] = np.nan
        return 0.0, g
    monkeypatch.setattr(wb, "attack_loss_and_grad", bad)
    with pytest.raises(FloatingPointError, match="iteration 0"):
        pgd_optimize(sbm_model, sbm.features, sbm.labels, GraphMiConfig(iterations=3))


def test_stationarity_at_truth(sbm, sbm_model):
    a = matrix_to_vec(sbm.adjacency).values
    cfg = GraphMiConfig(alpha=0, beta=0, iterations=1, lr=0.01)
    before = attack_loss(a, sbm.features, sbm.labels, sbm_model, 0, 0)
    after = attack_loss(pgd_optimize(sbm_model, sbm.features, sbm.labels, cfg, init=a), sbm.features,
                        sbm.labels, sbm_model, 0, 0)
    assert after <= before + 1e-9


def test_gae_examples(rng):
    zero = GcnModel(np.zeros((2, 3)), np.zeros((3, 2)))
    X = rng.standard_normal((5, 2))
    out = gae_postprocess(zero, AdjVector(np.zeros(10), 5), X)
    np.testing.assert_array_equal(out.values, 0.5)
    m = init_model(2, 2, seed=0)
    Xd = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    probs = gae_postprocess(m, AdjVector(np.zeros(6), 4), Xd).values
    assert probs[1] == probs[3]  # pairs (0,2) and (1,2): nodes 0 and 1 are duplicates
    assert np.all((probs > 0) & (probs < 1))


@pytest.mark.parametrize("rho", [0.001, 0.01, 0.1, 0.5])
def test_sampling_exact_edge_count(rho, sbm, sbm_model, rng):
    n = sbm.num_nodes * (sbm.num_nodes - 1) // 2
    cfg = GraphMiConfig(density=DensityEstimate(rho), trials=3)
    A = random_sample(AdjVector(rng.random(n), sbm.num_nodes), cfg, sbm_model, sbm.features, sbm.labels, seed=1)
    assert np.triu(A, 1).sum() == int(np.floor(rho * n))
    np.testing.assert_array_equal(A, A.T)


def test_sampling_one_hot_probability(sbm, sbm_model):
    n = sbm.num_nodes * (sbm.num_nodes - 1) // 2
    probs = np.zeros(n)
    probs[17] = 1.0
    cfg = GraphMiConfig(density=DensityEstimate(1.5 / n), trials=4)
    for seed in range(5):
        A = random_sample(AdjVector(probs, sbm.num_nodes), cfg, sbm_model, sbm.features, sbm.labels, seed)
        np.testing.assert_array_equal(matrix_to_vec(A).values, probs)


def test_sampling_zero_probs_falls_back_to_uniform(sbm, sbm_model, caplog):
    n = sbm.num_nodes * (sbm.num_nodes - 1) // 2
    cfg = GraphMiConfig(density=DensityEstimate(0.05), trials=2)
    with caplog.at_level(logging.WARNING):
        A = random_sample(AdjVector(np.zeros(n), sbm.num_nodes), cfg, sbm_model, sbm.features, sbm.labels, 0)
    assert "uniformly" in caplog.text
    assert np.triu(A, 1).sum() == int(0.05 * n)


def test_sampling_keeps_lowest_loss_candidate(sbm, sbm_model, rng):
    n = sbm.num_nodes * (sbm.num_nodes - 1) // 2
    cfg = GraphMiConfig(density=DensityEstimate(density(sbm.adjacency)), trials=20)
    losses = []
    A = random_sample(AdjVector(rng.random(n), sbm.num_nodes), cfg, sbm_model, sbm.features, sbm.labels, 3, losses)
    chosen = attack_loss(matrix_to_vec(A).values, sbm.features, sbm.labels, sbm_model, cfg.alpha, cfg.beta,
                         cfg.degree_eps)
    assert len(losses) == 20
    assert chosen == min(losses) <= np.median(losses)


def test_sample_edges_follows_weights():
    rng = np.random.default_rng(0)
    w = np.array([0.7, 0.2, 0.1, 0.0])
    counts = np.zeros(4)
    for _ in range(4000):
        counts[sample_edges(w, 1, rng)] += 1
    np.testing.assert_allclose(counts / 4000, w, atol=0.03)
    # zero-weight entries only appear once the positive ones are used up
    assert set(sample_edges(w, 3, rng)) == {0, 1, 2}
    assert len(sample_edges(w, 4, rng)) == 4
    with pytest.raises(ValueError):
        sample_edges(w, 5, rng)


def test_known_labels_per_class():
    labels = np.repeat([0, 1, 2], 10)
    Y = known_labels(labels, 0.2, seed=0)
    for c in range(3):
        assert np.sum(Y == c) == 2
    assert np.all((Y == UNKNOWN) | (Y == labels))
    np.testing.assert_array_equal(known_labels(labels, 1.0, 0), labels)


def test_config_validation():
    with pytest.raises(ValueError):
        GraphMiConfig(alpha=-1)
    with pytest.raises(ValueError):
        GraphMiConfig(lr=0)
    with pytest.raises(ValueError):
        GraphMiConfig(trials=0)
    with pytest.raises(ValueError):
        GraphMiConfig(label_fraction=0)


def test_reconstruction_invariant_to_relabeling(rng):
    from gnn_inversion.data import generate_sbm
    from gnn_inversion.gcn import train
    g = generate_sbm(2, 6, 0.6, 0.05, 0.5, seed=4)
    model = train(g, np.ones(g.num_nodes, bool), epochs=50, seed=0, patience=None)
    cfg = GraphMiConfig(density=DensityEstimate(density(g.adjacency)), iterations=20, trials=2)
    res = run_graphmi(model, g.features, g.labels, cfg, seed=0)
    perm = rng.permutation(g.num_nodes)
    P = np.eye(g.num_nodes)[perm]
    res_p = run_graphmi(model, P @ g.features, g.labels[perm], cfg, seed=0)
    M = np.zeros((g.num_nodes, g.num_nodes))
    iu, ju = np.triu_indices(g.num_nodes, 1)
    M[iu, ju] = res.edge_scores
    M = M + M.T
    Mp = np.zeros_like(M)
    Mp[iu, ju] = res_p.edge_scores
    Mp = Mp + Mp.T
    np.testing.assert_allclose(P @ M @ P.T, Mp, atol=1e-9)
    A_p = P @ g.adjacency @ P.T

    def auc_all(scores_mat, A):
        pos = A[iu, ju] > 0
        s = scores_mat[iu, ju]
        p, q = s[pos], s[~pos]
        return float(np.mean([(x > q).mean() + 0.5 * (x == q).mean() for x in p]))

    assert auc_all(M, g.adjacency) == pytest.approx(auc_all(Mp, A_p), abs=1e-12)
