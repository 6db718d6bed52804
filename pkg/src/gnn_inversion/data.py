"""Dataset loading and synthetic graph generation."""
from __future__ import annotations

import logging
import re
from pathlib import Path

import numpy as np

from .graph import Graph

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


def _read_rows(path: Path) -> list[list[str]]:
    """Non-empty lines split on commas, tabs or spaces."""
    return [re.split(r"[,\s]+", line.strip()) for line in path.read_text().splitlines() if line.strip()]


def _to_int(token: str, where: str) -> int:
    try:
        value = float(token)
    except ValueError:
        raise DatasetError(f"{where}: {token!r} is not an integer") from None
    if value != int(value):
        raise DatasetError(f"{where}: {token!r} is not an integer")
    return int(value)


def load_dataset(path, name: str | None = None) -> Graph:
    """Read ``edges.tsv``, ``labels.csv`` and optionally ``features.csv`` from a directory.

    Missing features fall back to one-hot node identity. Duplicate and
    reversed edge lines collapse to one undirected edge; self-loops are
    dropped with a warning.
    """
    root = Path(path)
    labels_rows = _read_rows(root / "labels.csv")
    labels = np.array([_to_int(r[-1], f"labels.csv line {k + 1}") for k, r in enumerate(labels_rows)])
    N = labels.size
    if N == 0:
        raise DatasetError("labels.csv is empty")
    if labels.min() < 0:
        raise DatasetError("labels must be non-negative class ids")

    feat_path = root / "features.csv"
    if feat_path.exists():
        rows = _read_rows(feat_path)
        try:
            features = np.array([[float(x) for x in r] for r in rows], dtype=np.float64)
        except ValueError as exc:
            raise DatasetError(f"features.csv: {exc}") from None
        if features.ndim != 2 or features.shape[0] != N:
            raise DatasetError(f"features.csv has {len(rows)} rows but labels.csv has {N}")
    else:
        features = np.eye(N)

    A = np.zeros((N, N))
    dropped = 0
    for k, row in enumerate(_read_rows(root / "edges.tsv")):
        if len(row) < 2:
            raise DatasetError(f"edges.tsv line {k + 1}: expected two columns")
        i, j = (_to_int(t, f"edges.tsv line {k + 1}") for t in row[:2])
        if not (0 <= i < N and 0 <= j < N):
            raise DatasetError(f"edges.tsv line {k + 1}: node id out of range [0, {N})")
        if i == j:
            dropped += 1
            continue
        A[i, j] = A[j, i] = 1.0
    if dropped:
        log.warning("dropped %d self-loop line(s) from %s", dropped, root / "edges.tsv")
    return Graph(features, labels, A, int(labels.max()) + 1, name or root.name)


def save_dataset(graph: Graph, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "edges.tsv", "w") as fh:
        for i, j in graph.edges():
            fh.write(f"{i}\t{j}\n")
    np.savetxt(root / "features.csv", graph.features, delimiter=",", fmt="%.17g")
    np.savetxt(root / "labels.csv", graph.labels, fmt="%d")


def generate_sbm(blocks: int = 2, nodes_per_block: int = 20, p_in: float = 0.5, p_out: float = 0.02,
                 feature_noise: float = 0.5, seed: int = 0, feature_dim: int | None = None) -> Graph:
    """Stochastic block model with block-id labels and noisy one-hot block features.

    ``feature_dim`` pads the one-hot block indicator with extra pure-noise columns.
    """
    for p in (p_in, p_out):
        if not 0 <= p <= 1:
            raise ValueError("edge probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    N = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks), nodes_per_block)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    draws = rng.random((N, N)) < prob
    A = np.triu(draws, 1).astype(np.float64)
    A = A + A.T
    dim = max(blocks, feature_dim or blocks)
    features = np.zeros((N, dim))
    features[np.arange(N), labels] = 1.0
    features += feature_noise * rng.standard_normal((N, dim))
    return Graph(features, labels, A, blocks, f"sbm{blocks}x{nodes_per_block}")
