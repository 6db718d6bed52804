"""Hierarchical deep Q-learning agent that rebuilds a graph one edge at a time.

The agent picks a first node with Q1 and a partner with Q2. States are
embedded by a two-layer GCN over the partial graph concatenated with a
two-layer label encoder; the state vector is the mean node embedding.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..gcn import glorot
from ..graph import AdjVector, normalized_adjacency, num_pairs, pair_index
from .blackbox import HardLabelOracle
from .whitebox import UNKNOWN, ReconstructionResult

log = logging.getLogger(__name__)

# keeps the batched (B, N, N) adjacency stack under ~64 MB
_BATCH_FLOATS = 8_000_000


@dataclass(frozen=True)
class RlConfig:
    gamma: float = 0.95
    max_edges: int = 1
    target_update: int = 10
    episodes: int = 10
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    buffer_capacity: int = 10_000
    batch_size: int = 64
    embed_dim: int = 64
    q_hidden: int = 64
    lr: float = 0.01
    td_clip: float = 1.0
    reward_scope: str = "known"

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.max_edges < 1:
            raise ValueError("max_edges must be at least 1")
        if self.target_update < 1 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("target_update, batch_size and buffer_capacity must be positive")
        if self.reward_scope not in ("known", "all"):
            raise ValueError("reward_scope must be 'known' or 'all'")

    def epsilon(self, episode: int) -> float:
        span = max(1.0, self.eps_decay_fraction * self.episodes)
        frac = min(1.0, episode / span)
        return self.eps_start + (self.eps_end - self.eps_start) * frac


PARAM_NAMES = ("gcn_W0", "gcn_W1", "lab_W0", "lab_W1", "q1_W2", "q1_W1", "q2_W2", "q2_W1")


class QNetworks:
    """Online and target parameter sets for the hierarchical Q function."""

    def __init__(self, num_features: int, num_classes: int, embed_dim: int = 64, q_hidden: int = 64,
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        m = embed_dim
        shapes = {
            "gcn_W0": (num_features, m), "gcn_W1": (m, m),
            "lab_W0": (num_classes + 1, m), "lab_W1": (m, m),
            "q1_W2": (4 * m, q_hidden), "q1_W1": (q_hidden, 1),
            "q2_W2": (6 * m, q_hidden), "q2_W1": (q_hidden, 1),
        }
        self.num_classes = num_classes
        self.online = {k: glorot(rng, *shapes[k]) for k in PARAM_NAMES}
        self.target = {k: v.copy() for k, v in self.online.items()}

    def sync(self) -> None:
        self.target = {k: v.copy() for k, v in self.online.items()}

    def zero_(self) -> None:
        for v in self.online.values():
            v[...] = 0.0
        self.sync()


def label_onehot(Y: np.ndarray, num_classes: int) -> np.ndarray:
    """One-hot labels with an extra final column flagging unknown labels."""
    Y = np.asarray(Y)
    out = np.zeros((Y.size, num_classes + 1))
    known = Y != UNKNOWN
    out[np.flatnonzero(known), Y[known]] = 1.0
    out[~known, num_classes] = 1.0
    return out


def _embed(params: dict, A_batch: np.ndarray, X: np.ndarray, onehot: np.ndarray):
    """Node embeddings (B, N, 2m) and state embeddings (B, 2m) as tensors."""
    B, N, _ = A_batch.shape
    A_norm = normalized_adjacency(ad.Tensor(A_batch))
    XW = ad.matmul(ad.constant(X), params["gcn_W0"])
    H = ad.relu(ad.matmul(A_norm, XW))
    struct = ad.matmul(A_norm, ad.matmul(H, params["gcn_W1"]))
    lab = ad.matmul(ad.relu(ad.matmul(ad.constant(onehot), params["lab_W0"])), params["lab_W1"])
    m = lab.shape[-1]
    lab_b = ad.take_rows(ad.reshape(lab, (1, N, m)), np.zeros(B, dtype=np.int64), axis=0)
    e_v = ad.concat([struct, lab_b], axis=-1)
    e_s = ad.mean(e_v, axis=1)
    return e_v, e_s


def _broadcast_nodes(t: ad.Tensor, N: int) -> ad.Tensor:
    B, D = t.shape
    return ad.take_rows(ad.reshape(t, (B, 1, D)), np.zeros(N, dtype=np.int64), axis=1)


def _mlp(x: ad.Tensor, W2, W1) -> ad.Tensor:
    out = ad.matmul(ad.relu(ad.matmul(x, W2)), W1)
    return ad.reshape(out, out.shape[:-1])


def q1_scores(params, e_v: ad.Tensor, e_s: ad.Tensor) -> ad.Tensor:
    N = e_v.shape[1]
    return _mlp(ad.concat([e_v, _broadcast_nodes(e_s, N)], axis=-1), params["q1_W2"], params["q1_W1"])


def q2_scores(params, e_v: ad.Tensor, e_s: ad.Tensor, first: np.ndarray) -> ad.Tensor:
    B, N, D = e_v.shape
    flat = ad.reshape(e_v, (B * N, D))
    chosen = ad.take_rows(flat, np.arange(B) * N + np.asarray(first, dtype=np.int64), axis=0)
    x = ad.concat([e_v, _broadcast_nodes(chosen, N), _broadcast_nodes(e_s, N)], axis=-1)
    return _mlp(x, params["q2_W2"], params["q2_W1"])


def _const(params: dict) -> dict:
    return {k: ad.Tensor(v) for k, v in params.items()}


def state_embedding(nets: QNetworks, A_t: np.ndarray, X: np.ndarray, Y: np.ndarray):
    """Per-node embeddings (N, 2m) and the state embedding (2m,) for one partial graph."""
    e_v, e_s = _embed(_const(nets.online), np.asarray(A_t, dtype=np.float64)[None], X,
                      label_onehot(Y, nets.num_classes))
    return e_v.data[0].copy(), e_s.data[0].copy()


def first_action_mask(A: np.ndarray) -> np.ndarray:
    return A.sum(axis=-1) < A.shape[-1] - 1


def second_action_mask(A: np.ndarray, first: int) -> np.ndarray:
    mask = A[first] == 0
    mask[first] = False
    return mask


def masked_argmax(scores: np.ndarray, mask: np.ndarray) -> int:
    """Highest score among allowed entries, lowest index on ties."""
    if not mask.any():
        raise ValueError("no valid action")
    return int(np.argmax(np.where(mask, scores, -np.inf)))


def q_values(nets: QNetworks, A_t: np.ndarray, X: np.ndarray, Y: np.ndarray, first: int | None = None,
             params: dict | None = None) -> np.ndarray:
    """Q1 scores for every node, or Q2 scores given the chosen first node."""
    p = _const(params if params is not None else nets.online)
    e_v, e_s = _embed(p, np.asarray(A_t, dtype=np.float64)[None], X, label_onehot(Y, nets.num_classes))
    if first is None:
        return q1_scores(p, e_v, e_s).data[0].copy()
    return q2_scores(p, e_v, e_s, np.array([first])).data[0].copy()


def rl_reward(oracle: HardLabelOracle, A_t: np.ndarray, X: np.ndarray, Y_known: np.ndarray,
              prev_acc: float) -> tuple[int, float]:
    """+1 if accuracy did not drop since the previous step, else -1 (one query)."""
    acc = oracle.accuracy(A_t, Y_known)
    return (1 if acc >= prev_acc else -1), acc


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling (with replacement)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: list = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, item) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def sample(self, rng: np.random.Generator, batch_size: int) -> list:
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class Transition:
    edges: tuple[int, ...]
    first: int
    second: int
    reward: float
    done: bool


def _adjacency_from_edges(edges, N: int) -> np.ndarray:
    A = np.zeros((N, N))
    if edges:
        iu, ju = np.triu_indices(N, 1)
        idx = np.asarray(edges, dtype=np.int64)
        A[iu[idx], ju[idx]] = 1.0
        A[ju[idx], iu[idx]] = 1.0
    return A


@dataclass
class TdStats:
    td_raw: list = field(default_factory=list)
    td_clipped: list = field(default_factory=list)


def td_update(nets: QNetworks, batch: list[Transition], X: np.ndarray, onehot: np.ndarray, cfg: RlConfig,
              stats: TdStats | None = None) -> float:
    """One gradient step on the clipped temporal-difference errors of both Q heads.

    Q1 regresses onto the target net's best Q2 for the same state and first
    node; Q2 regresses onto r + gamma * max Q1 of the next state.
    Returns the mean Huber loss.
    """
    N = X.shape[0]
    chunk = max(1, min(len(batch), _BATCH_FLOATS // (N * N)))
    grads = {k: np.zeros_like(v) for k, v in nets.online.items()}
    huber_total = 0.0
    tgt = _const(nets.target)
    for start in range(0, len(batch), chunk):
        part = batch[start:start + chunk]
        B = len(part)
        S = np.stack([_adjacency_from_edges(t.edges, N) for t in part])
        S_next = S.copy()
        first = np.array([t.first for t in part])
        second = np.array([t.second for t in part])
        S_next[np.arange(B), first, second] = 1.0
        S_next[np.arange(B), second, first] = 1.0
        rewards = np.array([t.reward for t in part])
        done = np.array([t.done for t in part], dtype=bool)

        # targets from the frozen copy
        ev_t, es_t = _embed(tgt, S, X, onehot)
        q2_t = q2_scores(tgt, ev_t, es_t, first).data
        m2 = np.stack([second_action_mask(S[b], first[b]) for b in range(B)])
        y1 = np.where(m2, q2_t, -np.inf).max(axis=1)
        ev_n, es_n = _embed(tgt, S_next, X, onehot)
        q1_n = q1_scores(tgt, ev_n, es_n).data
        m1n = first_action_mask(S_next)
        best_next = np.where(m1n, q1_n, -np.inf).max(axis=1)
        best_next = np.where(done | ~np.isfinite(best_next), 0.0, best_next)
        y2 = rewards + cfg.gamma * best_next

        leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in nets.online.items()}
        e_v, e_s = _embed(leaves, S, X, onehot)
        q1 = ad.take_rows(ad.reshape(q1_scores(leaves, e_v, e_s), (B * N,)), np.arange(B) * N + first)
        q2 = ad.take_rows(ad.reshape(q2_scores(leaves, e_v, e_s, first), (B * N,)), np.arange(B) * N + second)
        td1 = y1 - q1.data
        td2 = y2 - q2.data
        c1 = np.clip(td1, -cfg.td_clip, cfg.td_clip)
        c2 = np.clip(td2, -cfg.td_clip, cfg.td_clip)
        if stats is not None:
            stats.td_raw.extend(np.concatenate([td1, td2]).tolist())
            stats.td_clipped.extend(np.concatenate([c1, c2]).tolist())
        # d/dQ of this surrogate is exactly -clip(td) / batch
        surrogate = ad.scalar_mul(ad.reduce_sum(q1 * ad.Tensor(c1)) + ad.reduce_sum(q2 * ad.Tensor(c2)),
                                  -1.0 / len(batch))
        ad.backward(surrogate)
        for k, leaf in leaves.items():
            grads[k] += leaf.grad
        for td in (td1, td2):
            a = np.abs(td)
            huber_total += float(np.where(a <= cfg.td_clip, 0.5 * td * td,
                                          cfg.td_clip * (a - 0.5 * cfg.td_clip)).sum())
    for k in nets.online:
        nets.online[k] = nets.online[k] - cfg.lr * grads[k]
    return huber_total / (2 * len(batch))


def _epsilon_greedy(rng: np.random.Generator, eps: float, scores: np.ndarray, mask: np.ndarray) -> int:
    if rng.random() < eps:
        return int(rng.choice(np.flatnonzero(mask)))
    return masked_argmax(scores, mask)


def greedy_rollout(nets: QNetworks, X: np.ndarray, Y: np.ndarray, max_edges: int) -> list[tuple[int, int]]:
    """Edges chosen by the greedy policy from an empty graph, in selection order."""
    N = X.shape[0]
    A = np.zeros((N, N))
    chosen = []
    for _ in range(min(max_edges, num_pairs(N))):
        m1 = first_action_mask(A)
        a1 = masked_argmax(q_values(nets, A, X, Y), m1)
        a2 = masked_argmax(q_values(nets, A, X, Y, first=a1), second_action_mask(A, a1))
        A[a1, a2] = A[a2, a1] = 1.0
        chosen.append((min(a1, a2), max(a1, a2)))
    return chosen


@dataclass
class RlTrainingLog:
    episode_rewards: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    syncs: list = field(default_factory=list)
    td: TdStats = field(default_factory=TdStats)


def run_rl_graphmi(oracle: HardLabelOracle, X: np.ndarray, Y_known: np.ndarray, cfg: RlConfig,
                   seed: int = 0, all_labels: np.ndarray | None = None, nets: QNetworks | None = None,
                   log_out: RlTrainingLog | None = None, on_step=None) -> ReconstructionResult:
    """Train the agent for ``cfg.episodes`` episodes, then reconstruct with one greedy rollout.

    Edge scores rank pairs by greedy selection order (earliest highest);
    pairs never selected score zero.
    """
    start = time.perf_counter()
    q0 = oracle.query_count
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    Y_known = np.asarray(Y_known)
    if cfg.reward_scope == "all":
        if all_labels is None:
            raise ValueError("reward_scope='all' needs all_labels")
        reward_labels = np.asarray(all_labels)
    else:
        reward_labels = Y_known
    num_classes = int(max(Y_known.max(), reward_labels.max())) + 1
    rng = np.random.default_rng(seed)
    if nets is None:
        nets = QNetworks(X.shape[1], num_classes, cfg.embed_dim, cfg.q_hidden, seed=int(rng.integers(2**31)))
    onehot = label_onehot(Y_known, nets.num_classes)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    train_log = log_out if log_out is not None else RlTrainingLog()
    max_edges = min(cfg.max_edges, num_pairs(N))

    empty_acc = oracle.accuracy(np.zeros((N, N)), reward_labels)
    step = 0
    for episode in range(cfg.episodes):
        eps = cfg.epsilon(episode)
        A = np.zeros((N, N))
        edges: list[int] = []
        prev_acc = empty_acc
        total = 0.0
        for t in range(max_edges):
            e_v, e_s = _embed(_const(nets.online), A[None], X, onehot)
            m1 = first_action_mask(A)
            s1 = q1_scores(_const(nets.online), e_v, e_s).data[0]
            a1 = _epsilon_greedy(rng, eps, s1, m1)
            m2 = second_action_mask(A, a1)
            s2 = q2_scores(_const(nets.online), e_v, e_s, np.array([a1])).data[0]
            a2 = _epsilon_greedy(rng, eps, s2, m2)
            before = tuple(edges)
            A[a1, a2] = A[a2, a1] = 1.0
            edges.append(pair_index(a1, a2, N))
            reward, prev_acc = rl_reward(oracle, A, X, reward_labels, prev_acc)
            total += reward
            done = t == max_edges - 1
            buffer.push(Transition(before, a1, a2, float(reward), done))
            if len(buffer) >= min(cfg.batch_size, cfg.buffer_capacity):
                batch = buffer.sample(rng, cfg.batch_size)
                train_log.losses.append(td_update(nets, batch, X, onehot, cfg, train_log.td))
            step += 1
            if step % cfg.target_update == 0:
                nets.sync()
                train_log.syncs.append(step)
            if on_step is not None:
                on_step(step, nets, buffer)
        train_log.episode_rewards.append(total)
        log.debug("episode %d eps=%.3f reward=%.0f", episode, eps, total)

    order = greedy_rollout(nets, X, Y_known, max_edges)
    scores = np.zeros(num_pairs(N))
    sampled = np.zeros((N, N))
    for rank, (i, j) in enumerate(order):
        scores[pair_index(i, j, N)] = len(order) - rank
        sampled[i, j] = sampled[j, i] = 1.0
    probs = AdjVector(scores / max(1, len(order)), N)
    return ReconstructionResult(probs, sampled, [float(r) for r in train_log.episode_rewards],
                                time.perf_counter() - start, scores, oracle.query_count - q0,
                                extras={"episodes": cfg.episodes, "max_edges": max_edges,
                                        "syncs": len(train_log.syncs)})
