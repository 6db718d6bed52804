"""Graph preprocessing defenses applied to the training graph before the target model is fit."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph
from .metrics import cosine_similarity_pairs

log = logging.getLogger(__name__)

REWIRE_RETRIES = 10
STRATEGIES = ("rewire", "add_similar", "flip")


@dataclass(frozen=True)
class PerturbConfig:
    strategy: str
    p: float
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0 < self.p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")


def rewire(graph: Graph, p: float, seed: int = 0) -> Graph:
    """Replace each edge with probability ``p`` by an edge from one of its endpoints to a random node.

    The kept endpoint is ``i`` or ``j`` with equal odds. A replacement that
    already exists is redrawn up to ten times, after which the edge is dropped,
    so the edge count never grows.
    """
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    N = graph.num_nodes
    if N < 3:
        raise ValueError("rewiring needs at least 3 nodes")
    rng = np.random.default_rng(seed)
    A = graph.adjacency.copy()
    dropped = 0
    for i, j in graph.edges():
        if rng.random() >= p:
            continue
        A[i, j] = A[j, i] = 0.0
        u = i if rng.random() < 0.5 else j
        for _ in range(REWIRE_RETRIES + 1):
            k = int(rng.integers(N - 2))
            # skip over i and j so k is uniform on the remaining nodes
            for s in sorted((i, j)):
                if k >= s:
                    k += 1
            if A[u, k] == 0:
                A[u, k] = A[k, u] = 1.0
                break
        else:
            dropped += 1
    if dropped:
        log.debug("rewire dropped %d edge(s) after repeated collisions", dropped)
    return graph.with_adjacency(A, f"{graph.name}-rewire{p:g}")


def _is_featureless(X: np.ndarray) -> bool:
    return X.shape[1] == 0 or not np.any(X) or (X.shape[0] == X.shape[1] and np.array_equal(X, np.eye(X.shape[0])))


def add_similar_edges(graph: Graph, budget_fraction: float, seed: int = 0) -> Graph:
    """Add floor(budget_fraction * |E|) edges between the most feature-similar non-adjacent pairs.

    Equal similarities are ordered by a seeded random key. Identity (one-hot
    id) features carry no similarity signal and are rejected.
    """
    if budget_fraction < 0:
        raise ValueError("budget_fraction must be non-negative")
    budget = int(math.floor(budget_fraction * graph.num_edges))
    if budget == 0:
        return graph.with_adjacency(graph.adjacency.copy(), graph.name)
    X = graph.features
    if _is_featureless(X):
        raise ValueError("add_similar needs informative node features")
    N = graph.num_nodes
    iu, ju = np.triu_indices(N, 1)
    sim = cosine_similarity_pairs(X)
    free = np.flatnonzero(graph.adjacency[iu, ju] == 0)
    if budget > free.size:
        raise ValueError(f"budget {budget} exceeds the {free.size} non-adjacent pairs")
    tiebreak = np.random.default_rng(seed).random(free.size)
    order = np.lexsort((tiebreak, -sim[free]))
    chosen = free[order[:budget]]
    A = graph.adjacency.copy()
    A[iu[chosen], ju[chosen]] = 1.0
    A[ju[chosen], iu[chosen]] = 1.0
    return graph.with_adjacency(A, f"{graph.name}-add{budget_fraction:g}")


def flip_epsilon(p: float) -> float:
    """Edge-level privacy of randomized flipping: ln(2/p - 1)."""
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    return math.log(2.0 / p - 1.0)


def flip(graph: Graph, p: float, seed: int = 0) -> tuple[Graph, float]:
    """Keep each node pair with probability 1-p, otherwise redraw it from Bern(1/2)."""
    eps = flip_epsilon(p)
    rng = np.random.default_rng(seed)
    N = graph.num_nodes
    iu, ju = np.triu_indices(N, 1)
    vals = graph.adjacency[iu, ju].copy()
    redraw = rng.random(vals.size) < p
    coins = rng.random(vals.size) < 0.5
    vals[redraw] = coins[redraw]
    A = np.zeros((N, N))
    A[iu, ju] = vals
    A[ju, iu] = vals
    return graph.with_adjacency(A, f"{graph.name}-flip{p:g}"), eps


def apply_defense(graph: Graph, cfg: PerturbConfig) -> tuple[Graph, float | None]:
    """Perturbed graph plus the privacy level when the strategy has one."""
    if cfg.strategy == "rewire":
        return rewire(graph, cfg.p, cfg.seed), None
    if cfg.strategy == "add_similar":
        return add_similar_edges(graph, cfg.p, cfg.seed), None
    return flip(graph, cfg.p, cfg.seed)
