import logging

import numpy as np
import pytest

from gnn_inversion.data import DatasetError, generate_sbm, load_dataset, save_dataset


def write(tmp_path, edges, labels, features=None):
    (tmp_path / "edges.tsv").write_text(edges)
    (tmp_path / "labels.csv").write_text(labels)
    if features is not None:
        (tmp_path / "features.csv").write_text(features)
    return tmp_path


def test_three_line_fixture(tmp_path):
    g = load_dataset(write(tmp_path, "0\t1\n1\t2\n0\t2\n", "0\n1\n0\n", "1,0\n0,1\n1,1\n"))
    assert g.num_nodes == 3 and g.num_edges == 3 and g.num_classes == 2
    np.testing.assert_array_equal(g.features, [[1, 0], [0, 1], [1, 1]])
    np.testing.assert_array_equal(g.labels, [0, 1, 0])


def test_missing_features_become_identity(tmp_path):
    g = load_dataset(write(tmp_path, "0 1\n", "0\n1\n1\n"))
    np.testing.assert_array_equal(g.features, np.eye(3))


def test_duplicate_and_reversed_edges_collapse(tmp_path):
    g = load_dataset(write(tmp_path, "0 1\n1 0\n0 1\n", "0\n1\n"))
    assert g.num_edges == 1


def test_self_loops_dropped_with_warning(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        g = load_dataset(write(tmp_path, "0 0\n0 1\n", "0\n1\n"))
    assert g.num_edges == 1 and not np.diag(g.adjacency).any()
    assert "self-loop" in caplog.text


@pytest.mark.parametrize("edges,labels,features,match", [
    ("0 5\n", "0\n1\n", None, "out of range"),
    ("0 x\n", "0\n1\n", None, "not an integer"),
    ("0\n", "0\n1\n", None, "two columns"),
    ("0 1\n", "0\n1.5\n", None, "not an integer"),
    ("0 1\n", "0\n-1\n", None, "non-negative"),
    ("0 1\n", "0\n1\n", "1,0\n", "rows"),
    ("0 1\n", "0\n1\n", "1,a\n0,1\n", "features"),
    ("0 1\n", "", None, "empty"),
])
def test_malformed_inputs(tmp_path, edges, labels, features, match):
    with pytest.raises(DatasetError, match=match):
        load_dataset(write(tmp_path, edges, labels, features))


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_dataset(tmp_path)


def test_save_load_round_trip(tmp_path, sbm):
    save_dataset(sbm, tmp_path / "d")
    g = load_dataset(tmp_path / "d")
    np.testing.assert_array_equal(g.adjacency, sbm.adjacency)
    np.testing.assert_array_equal(g.features, sbm.features)
    np.testing.assert_array_equal(g.labels, sbm.labels)
    assert g.digest() == sbm.digest()


def test_sbm_extremes():
    g = generate_sbm(3, 4, 1.0, 0.0, 0.0, seed=0)
    for b in range(3):
        block = g.adjacency[4 * b:4 * b + 4, 4 * b:4 * b + 4]
        np.testing.assert_array_equal(block, np.ones((4, 4)) - np.eye(4))
    assert g.num_edges == 3 * 6
    np.testing.assert_array_equal(g.features, np.eye(3)[g.labels])


def test_sbm_mostly_within_block():
    g = generate_sbm(2, 50, 0.3, 0.01, seed=1)
    same = g.labels[:, None] == g.labels[None, :]
    within = np.triu(g.adjacency * same, 1).sum() / g.num_edges
    assert within > 0.9


def test_sbm_deterministic_and_validated():
    assert generate_sbm(seed=3).digest() == generate_sbm(seed=3).digest()
    assert generate_sbm(seed=3).digest() != generate_sbm(seed=4).digest()
    assert generate_sbm(2, 5, feature_dim=6).features.shape == (10, 6)
    with pytest.raises(ValueError):
        generate_sbm(p_in=1.5)
