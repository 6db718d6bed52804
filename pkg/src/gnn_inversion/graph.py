"""Graph container and the adjacency helpers every other module leans on.

Adjacency vectors use row-major upper-triangle order, so pair ``(i, j)`` with
``i < j`` lives at ``i*N - i*(i+1)/2 + (j - i - 1)``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

DEGREE_EPS = 1e-8


@dataclass(frozen=True)
class Graph:
    features: np.ndarray
    labels: np.ndarray
    adjacency: np.ndarray
    num_classes: int = 0
    name: str = "graph"

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        adj = np.asarray(self.adjacency, dtype=np.float64)
        n = adj.shape[0]
        if adj.shape != (n, n) or n < 1:
            raise ValueError(f"adjacency must be square, got {adj.shape}")
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ValueError(f"features must have {n} rows, got {feats.shape}")
        if labels.shape != (n,):
            raise ValueError(f"labels must have length {n}, got {labels.shape}")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency is not symmetric")
        if np.any(np.diag(adj) != 0):
            raise ValueError("adjacency has self-loops")
        if not np.all((adj == 0) | (adj == 1)):
            raise ValueError("adjacency is not binary")
        c = self.num_classes or (int(labels.max()) + 1 if n else 0)
        if labels.min() < 0 or labels.max() >= c:
            raise ValueError(f"labels must lie in [0, {c})")
        for name, value in (("features", feats), ("labels", labels), ("adjacency", adj)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "num_classes", c)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())

    def edge_vector(self) -> np.ndarray:
        return matrix_to_vec(self.adjacency)

    def edges(self) -> np.ndarray:
        """(E, 2) array of ``i < j`` pairs in upper-triangle order."""
        iu, ju = np.triu_indices(self.num_nodes, 1)
        keep = self.adjacency[iu, ju] > 0
        return np.stack([iu[keep], ju[keep]], axis=1)

    def with_adjacency(self, adjacency: np.ndarray, name: str | None = None) -> "Graph":
        return Graph(self.features, self.labels, adjacency, self.num_classes, name or self.name)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.features, self.labels, self.adjacency):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class AdjVector:
    values: np.ndarray
    num_nodes: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        n = self.num_nodes * (self.num_nodes - 1) // 2
        if vals.shape != (n,):
            raise ValueError(f"expected {n} entries for N={self.num_nodes}, got {vals.shape}")
        if np.any(vals < 0) or np.any(vals > 1):
            raise ValueError("adjacency vector entries must lie in [0, 1]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size

    def to_matrix(self) -> np.ndarray:
        return vec_to_matrix(self)


@dataclass(frozen=True)
class DensityEstimate:
    rho: float
    is_ground_truth: bool = False

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError(f"density must lie in (0, 1], got {self.rho}")

    def num_edges(self, num_pairs: int) -> int:
        return int(np.floor(self.rho * num_pairs))


def num_pairs(num_nodes: int) -> int:
    return num_nodes * (num_nodes - 1) // 2


def pair_index(i: int, j: int, num_nodes: int) -> int:
    if i == j:
        raise ValueError("no index for a diagonal entry")
    if i > j:
        i, j = j, i
    return i * num_nodes - i * (i + 1) // 2 + (j - i - 1)


def vec_to_matrix(a, num_nodes: int | None = None) -> np.ndarray:
    if isinstance(a, AdjVector):
        values, num_nodes = a.values, a.num_nodes
    else:
        values = np.asarray(a, dtype=np.float64)
        if num_nodes is None:
            num_nodes = int(round((1 + np.sqrt(1 + 8 * values.size)) / 2))
    iu, ju = np.triu_indices(num_nodes, 1)
    out = np.zeros((num_nodes, num_nodes))
    out[iu, ju] = values
    out[ju, iu] = values
    return out


def matrix_to_vec(A: np.ndarray) -> AdjVector:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got {A.shape}")
    if not np.array_equal(A, A.T):
        raise ValueError("matrix is not symmetric")
    if np.any(np.diag(A) != 0):
        raise ValueError("matrix has a nonzero diagonal")
    iu, ju = np.triu_indices(A.shape[0], 1)
    return AdjVector(A[iu, ju].copy(), A.shape[0])


def normalized_adjacency(A):
    """D^-1/2 (A + I) D^-1/2. Accepts arrays or tensors (batched on leading axes)."""
    if isinstance(A, ad.Tensor):
        A_hat = ad.add_identity(A)
        dinv = ad.rsqrt(ad.reduce_sum(A_hat, axis=-1))
        col = ad.reshape(dinv, dinv.shape + (1,))
        row = ad.reshape(dinv, dinv.shape[:-1] + (1, dinv.shape[-1]))
        return A_hat * col * row
    A = np.asarray(A, dtype=np.float64)
    A_hat = A + np.eye(A.shape[-1])
    dinv = A_hat.sum(axis=-1) ** -0.5
    return A_hat * dinv[..., :, None] * dinv[..., None, :]


def smoothness_terms(A: ad.Tensor, X: np.ndarray, eps: float = DEGREE_EPS) -> ad.Tensor:
    """Half the weighted sum of squared differences of degree-scaled features.

    Written as sum_i dA_i |y_i|^2 - sum_ij A_ij <y_i, y_j> with y_i = x_i / sqrt(d_i),
    which is the double sum expanded (A symmetric).
    """
    deg_raw = ad.reduce_sum(A, axis=-1)
    dinv = ad.rsqrt(ad.add(deg_raw, eps))
    Y = ad.reshape(dinv, (X.shape[0], 1)) * ad.constant(X)
    sq = ad.reduce_sum(Y * Y, axis=-1)
    first = ad.reduce_sum(deg_raw * sq)
    second = ad.reduce_sum(ad.matmul(A, Y) * Y)
    return first - second


def normalized_laplacian_smoothness(a, X: np.ndarray, eps: float = DEGREE_EPS) -> float:
    """Feature smoothness of the relaxed graph ``a`` under degree normalization."""
    values = a.values if isinstance(a, AdjVector) else np.asarray(a, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    A = ad.sym_from_vec(ad.Tensor(values), N)
    return float(smoothness_terms(A, X, eps).data)


def density(A: np.ndarray) -> float:
    A = np.asarray(A)
    n = num_pairs(A.shape[0])
    if n == 0:
        return 0.0
    return float(np.triu(A, 1).sum()) / n

