"""Edge-ranking metrics, similarity baselines, graph-level comparisons and edge influence."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.stats import rankdata, spearmanr

from .gcn import GcnModel, accuracy, node_embeddings
from .graph import AdjVector, Graph, pair_index

WL_ITERATIONS = 3
STAT_BINS = 10


@dataclass(frozen=True)
class EdgeScoreSet:
    positives: np.ndarray
    negatives: np.ndarray
    seed: int = 0
    positive_pairs: np.ndarray | None = None
    negative_pairs: np.ndarray | None = None

    def __post_init__(self):
        if len(self.positives) != len(self.negatives):
            raise ValueError("positives and negatives must have equal size")


@dataclass(frozen=True)
class GraphStatsReport:
    wl_similarity: float
    degree_cos: float
    lcc_cos: float
    bc_cos: float
    cc_cos: float

    def as_dict(self) -> dict:
        return {"wl": self.wl_similarity, "degree": self.degree_cos, "lcc": self.lcc_cos,
                "bc": self.bc_cos, "cc": self.cc_cos}


def sample_pairs(adjacency: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """All edges plus an equal number of uniformly drawn non-edges, as upper-triangle indices.

    If the graph has more edges than non-edges, edges are subsampled to match.
    """
    A = np.asarray(adjacency)
    iu, ju = np.triu_indices(A.shape[0], 1)
    flat = A[iu, ju] > 0
    pos = np.flatnonzero(flat)
    neg_pool = np.flatnonzero(~flat)
    rng = np.random.default_rng(seed)
    k = min(pos.size, neg_pool.size)
    if pos.size > k:
        pos = np.sort(rng.choice(pos, size=k, replace=False))
    neg = np.sort(rng.choice(neg_pool, size=k, replace=False))
    return pos, neg


def edge_score_set(scores, adjacency: np.ndarray, seed: int) -> EdgeScoreSet:
    values = scores.values if isinstance(scores, AdjVector) else np.asarray(scores, dtype=np.float64)
    pos, neg = sample_pairs(adjacency, seed)
    return EdgeScoreSet(values[pos], values[neg], seed, pos, neg)


def auc(scores: EdgeScoreSet) -> float:
    """P(positive > negative) + 0.5 P(tie), via the Mann-Whitney rank sum."""
    p = np.asarray(scores.positives, dtype=np.float64)
    q = np.asarray(scores.negatives, dtype=np.float64)
    if p.size == 0 or q.size == 0:
        raise ValueError("auc needs non-empty positives and negatives")
    ranks = rankdata(np.concatenate([p, q]))
    u = ranks[:p.size].sum() - p.size * (p.size + 1) / 2.0
    return float(u / (p.size * q.size))


def average_precision(scores: EdgeScoreSet) -> float:
    """Mean precision at each positive's rank; tied scores put negatives first."""
    p = np.asarray(scores.positives, dtype=np.float64)
    q = np.asarray(scores.negatives, dtype=np.float64)
    if p.size == 0 or q.size == 0:
        raise ValueError("average_precision needs non-empty positives and negatives")
    s = np.concatenate([p, q])
    is_pos = np.concatenate([np.ones(p.size, bool), np.zeros(q.size, bool)])
    order = np.lexsort((is_pos, -s))
    hits = is_pos[order]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits].mean())


# -- baselines -------------------------------------------------------------


def cosine_similarity_pairs(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    norms = np.linalg.norm(M, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    U = M / safe[:, None]
    S = U @ U.T
    S[norms == 0, :] = 0.0
    S[:, norms == 0] = 0.0
    iu, ju = np.triu_indices(M.shape[0], 1)
    return S[iu, ju]


def baseline_attr_similarity(graph: Graph) -> np.ndarray:
    """Cosine similarity of node features for every pair (upper-triangle order)."""
    return cosine_similarity_pairs(graph.features)


def baseline_emb_similarity(model: GcnModel, graph: Graph) -> np.ndarray:
    Z = node_embeddings(model, graph.adjacency, graph.features)
    return cosine_similarity_pairs(Z)


# -- graph-level similarity ------------------------------------------------


def _wl_histograms(graphs: list[np.ndarray], h: int) -> list[Counter]:
    adj_lists = [[np.flatnonzero(A[i]) for i in range(A.shape[0])] for A in graphs]
    labels = [[("deg", int(len(nb))) for nb in adj] for adj in adj_lists]
    hists = [Counter() for _ in graphs]
    for it in range(h + 1):
        palette: dict = {}
        compressed = []
        for lab in labels:
            compressed.append([palette.setdefault(x, len(palette)) for x in lab])
        for hist, lab in zip(hists, compressed):
            hist.update((it, x) for x in lab)
        if it == h:
            break
        labels = [
            [(lab[v], tuple(sorted(lab[u] for u in adj[v]))) for v in range(len(adj))]
            for lab, adj in zip(compressed, adj_lists)
        ]
    return hists


def wl_similarity(A1: np.ndarray, A2: np.ndarray, h: int = WL_ITERATIONS) -> float:
    """Normalized Weisfeiler-Lehman subtree kernel with degree-initialized labels."""
    A1, A2 = np.asarray(A1), np.asarray(A2)
    if A1.shape != A2.shape:
        raise ValueError("graphs must have the same number of nodes")
    h1, h2 = _wl_histograms([A1, A2], h)

    def k(a, b):
        return float(sum(v * b.get(key, 0) for key, v in a.items()))

    return k(h1, h2) / np.sqrt(k(h1, h1) * k(h2, h2))


def _node_statistics(A: np.ndarray) -> dict[str, np.ndarray]:
    G = nx.from_numpy_array(np.asarray(A))
    nodes = range(A.shape[0])
    lcc = nx.clustering(G)
    bc = nx.betweenness_centrality(G)
    cc = nx.closeness_centrality(G)
    return {
        "degree": np.asarray(A).sum(axis=1).astype(np.float64),
        "lcc": np.array([lcc[v] for v in nodes]),
        "bc": np.array([bc[v] for v in nodes]),
        "cc": np.array([cc[v] for v in nodes]),
    }


def histogram_cosine(x: np.ndarray, y: np.ndarray, bins: int = STAT_BINS) -> float:
    """Cosine similarity of equal-width histograms over the union range of both samples."""
    lo = min(x.min(), y.min())
    hi = max(x.max(), y.max())
    if hi == lo:
        hi = lo + 1.0
    hx, _ = np.histogram(x, bins=bins, range=(lo, hi))
    hy, _ = np.histogram(y, bins=bins, range=(lo, hi))
    return float(hx @ hy / (np.linalg.norm(hx) * np.linalg.norm(hy)))


def macro_stats_similarity(A1: np.ndarray, A2: np.ndarray, h: int = WL_ITERATIONS) -> GraphStatsReport:
    s1, s2 = _node_statistics(A1), _node_statistics(A2)
    return GraphStatsReport(
        wl_similarity(A1, A2, h),
        histogram_cosine(s1["degree"], s2["degree"]),
        histogram_cosine(s1["lcc"], s2["lcc"]),
        histogram_cosine(s1["bc"], s2["bc"]),
        histogram_cosine(s1["cc"], s2["cc"]),
    )


# -- edge influence --------------------------------------------------------


def edge_influence(model: GcnModel, graph: Graph, e: tuple[int, int], base_accuracy: float | None = None) -> float:
    """Accuracy over all labeled nodes minus accuracy with edge ``e`` removed."""
    i, j = e
    A = graph.adjacency
    if i == j or A[i, j] == 0:
        raise ValueError(f"({i}, {j}) is not an edge")
    if base_accuracy is None:
        base_accuracy = accuracy(model, A, graph.features, graph.labels)
    A_minus = A.copy()
    A_minus[i, j] = A_minus[j, i] = 0.0
    return base_accuracy - accuracy(model, A_minus, graph.features, graph.labels)


def all_edge_influences(model: GcnModel, graph: Graph) -> tuple[np.ndarray, np.ndarray]:
    """(edges, influence) for every edge, edges as (E, 2) upper-triangle pairs."""
    edges = graph.edges()
    base = accuracy(model, graph.adjacency, graph.features, graph.labels)
    infl = np.array([edge_influence(model, graph, (int(i), int(j)), base) for i, j in edges])
    return edges, infl


def influence_strata(influence: np.ndarray, quantiles: int) -> np.ndarray:
    """Stratum id per edge (0 = lowest influence); tied values share a stratum."""
    ranks = rankdata(influence, method="average")
    strata = np.floor((ranks - 0.5) / influence.size * quantiles).astype(int)
    return np.clip(strata, 0, quantiles - 1)


def edge_recovery(scores, graph: Graph, seed: int = 0, edges=None) -> np.ndarray:
    """Per-edge share of sampled non-edges scored below it (ties count half).

    Averaging this over any set of true edges gives their AUC against the
    shared negative pool used for the overall AUC.
    """
    values = scores.values if isinstance(scores, AdjVector) else np.asarray(scores, dtype=np.float64)
    if edges is None:
        edges = graph.edges()
    N = graph.num_nodes
    idx = np.array([pair_index(int(i), int(j), N) for i, j in edges], dtype=np.int64)
    _, neg = sample_pairs(graph.adjacency, seed)
    q = np.sort(values[neg])
    p = values[idx]
    below = np.searchsorted(q, p, side="left")
    ties = np.searchsorted(q, p, side="right") - below
    return (below + 0.5 * ties) / q.size


def strata_rows(influence: np.ndarray, recovery: np.ndarray, quantiles: int) -> list[dict]:
    strata = influence_strata(influence, quantiles)
    rows = []
    for s in range(quantiles):
        sel = strata == s
        if not sel.any():
            continue
        rows.append({
            "stratum": s,
            "num_edges": int(sel.sum()),
            "mean_influence": float(influence[sel].mean()),
            "auc": float(recovery[sel].mean()),
        })
    return rows


def influence_stratified_auc(model: GcnModel, graph: Graph, scores, quantiles: int = 5,
                             seed: int = 0, influence=None) -> list[dict]:
    """Attack AUC restricted to each influence stratum of the true edges.

    Each stratum's edges are compared against the same pool of sampled
    non-edges used for the overall AUC.
    """
    if influence is None:
        edges, influence = all_edge_influences(model, graph)
    else:
        edges = graph.edges()
    recovery = edge_recovery(scores, graph, seed, edges)
    return strata_rows(np.asarray(influence, dtype=np.float64), recovery, quantiles)


def pooled_influence_strata(influences, recoveries, quantiles: int = 5) -> list[dict]:
    """Stratified AUC over edges pooled from several repetitions of the same setup."""
    return strata_rows(np.concatenate([np.asarray(v, dtype=np.float64) for v in influences]),
                        np.concatenate([np.asarray(v, dtype=np.float64) for v in recoveries]), quantiles)


def stratum_trend(rows: list[dict]) -> float:
    """Spearman correlation between stratum order and stratum AUC."""
    if len(rows) < 2:
        return float("nan")
    rho = spearmanr([r["stratum"] for r in rows], [r["auc"] for r in rows]).statistic
    return float(rho)
