"""Two-layer GCN target model with plain and differentially private training."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .graph import AdjVector, Graph, normalized_adjacency, vec_to_matrix

log = logging.getLogger(__name__)

HIDDEN = 16
PENULTIMATE_MODES = ("propagated", "hidden")
RDP_ORDERS = np.arange(2, 257)


@dataclass(frozen=True)
class GcnModel:
    W0: np.ndarray
    W1: np.ndarray
    penultimate: str = "propagated"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.penultimate not in PENULTIMATE_MODES:
            raise ValueError(f"penultimate must be one of {PENULTIMATE_MODES}")
        if self.W0.shape[1] != self.W1.shape[0]:
            raise ValueError(f"weight shapes do not chain: {self.W0.shape}, {self.W1.shape}")

    @property
    def num_features(self) -> int:
        return self.W0.shape[0]

    @property
    def hidden(self) -> int:
        return self.W0.shape[1]

    @property
    def num_classes(self) -> int:
        return self.W1.shape[1]

    def weights_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.W0)) and np.all(np.isfinite(self.W1)))


@dataclass(frozen=True)
class DpConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 1.0
    delta: float = 1e-5
    iterations: int = 200

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be non-negative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")


@dataclass
class TrainResult:
    model: GcnModel
    val_accuracy: list[float]
    train_loss: list[float]
    grad_norms: list[float] = field(default_factory=list)
    epochs_run: int = 0


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(num_features: int, num_classes: int, hidden: int = HIDDEN, seed: int = 0,
               penultimate: str = "propagated") -> GcnModel:
    rng = np.random.default_rng(seed)
    return GcnModel(glorot(rng, num_features, hidden), glorot(rng, hidden, num_classes), penultimate,
                    {"seed": seed})


def _as_norm_adj(A) -> ad.Tensor:
    if isinstance(A, AdjVector):
        A = vec_to_matrix(A)
    A = ad.constant(A)
    return normalized_adjacency(A)


def forward_tensors(W0, W1, A, X: np.ndarray, penultimate: str = "propagated"):
    """Shared forward pass; ``A`` may be a tensor that requires grad."""
    A_norm = _as_norm_adj(A)
    H = ad.relu(ad.matmul(A_norm, ad.matmul(ad.constant(X), W0)))
    P = ad.matmul(A_norm, H)
    logits = ad.matmul(P, W1)
    return logits, (P if penultimate == "propagated" else H)


def gcn_forward(model: GcnModel, A_relaxed, X: np.ndarray):
    """Logits and penultimate representation as tensors, differentiable in ``A_relaxed``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.num_features:
        raise ad.ShapeError(f"model expects {model.num_features} features, got {X.shape[1]}")
    return forward_tensors(ad.constant(model.W0), ad.constant(model.W1), A_relaxed, X, model.penultimate)


def logits_numpy(model: GcnModel, A, X: np.ndarray) -> np.ndarray:
    A = vec_to_matrix(A) if isinstance(A, AdjVector) else np.asarray(A, dtype=np.float64)
    A_norm = normalized_adjacency(A)
    H = np.maximum(A_norm @ (X @ model.W0), 0.0)
    return A_norm @ H @ model.W1


def predict_hard(model: GcnModel, A, X: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, which is the lowest class id on ties
    return np.argmax(logits_numpy(model, A, X), axis=1)


def node_embeddings(model: GcnModel, a, X: np.ndarray) -> np.ndarray:
    A = vec_to_matrix(a) if isinstance(a, AdjVector) else a
    _, Z = gcn_forward(model, A, X)
    return Z.data.copy()


def accuracy(model: GcnModel, A, X: np.ndarray, labels: np.ndarray, mask=None) -> float:
    pred = predict_hard(model, A, X)
    labels = np.asarray(labels)
    if mask is None:
        return float(np.mean(pred == labels))
    mask = np.asarray(mask, dtype=bool)
    return float(np.mean(pred[mask] == labels[mask]))


# -- splits ----------------------------------------------------------------


def split_nodes(labels: np.ndarray, train_frac: float = 0.1, val_frac: float = 0.2, seed: int = 0):
    """Stratified random split into boolean (train, val, test) masks.

    Every class keeps at least one training node.
    """
    labels = np.asarray(labels)
    N = labels.size
    rng = np.random.default_rng(seed)
    train = np.zeros(N, dtype=bool)
    val = np.zeros(N, dtype=bool)
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = max(1, int(round(train_frac * idx.size)))
        n_va = int(round(val_frac * idx.size))
        n_va = min(n_va, idx.size - n_tr)
        train[idx[:n_tr]] = True
        val[idx[n_tr:n_tr + n_va]] = True
    test = ~(train | val)
    return train, val, test


# -- training --------------------------------------------------------------


class _Adam:
    def __init__(self, shapes, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        out = []
        for k, (p, g) in enumerate(zip(params, grads)):
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1 ** self.t)
            vh = self.v[k] / (1 - self.b2 ** self.t)
            out.append(p - self.lr * mh / (np.sqrt(vh) + self.eps))
        return out


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        return [p - self.lr * g for p, g in zip(params, grads)]


def _loss_and_grads(W0, W1, A_norm, X, labels, mask):
    w0 = ad.Tensor(W0, requires_grad=True)
    w1 = ad.Tensor(W1, requires_grad=True)
    H = ad.relu(ad.matmul(A_norm, ad.matmul(ad.constant(X), w0)))
    logits = ad.matmul(ad.matmul(A_norm, H), w1)
    loss = ad.softmax_cross_entropy(logits, labels, mask)
    ad.backward(loss)
    return float(loss.data), [w0.grad, w1.grad]


def _fit(graph: Graph, train_mask, val_mask, epochs: int, lr: float, seed: int, optimizer: str,
         patience: int | None, clip_norm: float | None, noise_std: float, hidden: int,
         penultimate: str) -> TrainResult:
    train_mask = np.asarray(train_mask, dtype=bool)
    if not train_mask.any():
        raise ValueError("training mask is empty")
    if val_mask is None:
        val_mask = ~train_mask
    val_mask = np.asarray(val_mask, dtype=bool)
    X, y = graph.features, graph.labels
    model = init_model(X.shape[1], graph.num_classes, hidden, seed, penultimate)
    noise_rng = np.random.default_rng([seed, 0xD9])
    A_norm = ad.constant(normalized_adjacency(graph.adjacency))
    params = [model.W0.copy(), model.W1.copy()]
    opt = _Adam([p.shape for p in params], lr) if optimizer == "adam" else _Sgd(lr)

    def evaluate(ps):
        if not val_mask.any():
            return 0.0, 0.0
        logits = A_norm.data @ np.maximum(A_norm.data @ (X @ ps[0]), 0.0) @ ps[1]
        acc = float(np.mean(np.argmax(logits[val_mask], axis=1) == y[val_mask]))
        z = logits[val_mask] - logits[val_mask].max(axis=1, keepdims=True)
        nll = np.log(np.exp(z).sum(axis=1)) - z[np.arange(z.shape[0]), y[val_mask]]
        return acc, float(nll.mean())

    # ranked by validation accuracy, validation loss breaks ties
    def better(a, b):
        return a[0] > b[0] or (a[0] == b[0] and a[1] < b[1])

    best = (evaluate(params), [p.copy() for p in params])
    val_hist, loss_hist, norms = [best[0][0]], [], []
    since_best = 0
    ran = 0
    for _ in range(epochs):
        loss, grads = _loss_and_grads(params[0], params[1], A_norm, X, y, train_mask)
        loss_hist.append(loss)
        if clip_norm is not None:
            total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
            scale = min(1.0, clip_norm / total) if total > 0 else 1.0
            grads = [g * scale for g in grads]
            norms.append(total * scale)
        if noise_std > 0:
            grads = [g + noise_rng.normal(0.0, noise_std, size=g.shape) for g in grads]
        params = opt.step(params, grads)
        ran += 1
        score = evaluate(params)
        val_hist.append(score[0])
        if patience is None:
            best = (score, [p.copy() for p in params])
            continue
        if better(score, best[0]):
            best = (score, [p.copy() for p in params])
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                break
    final = replace(model, W0=best[1][0], W1=best[1][1],
                    meta={"seed": seed, "dataset": graph.name, "dataset_hash": graph.digest(),
                          "epochs_run": ran})
    if not final.weights_finite():
        raise FloatingPointError("training produced non-finite weights")
    return TrainResult(final, val_hist, loss_hist, norms, ran)


def train(graph: Graph, train_mask, epochs: int = 200, lr: float = 0.01, seed: int = 0,
          val_mask=None, optimizer: str = "adam", patience: int | None = 20,
          clip_norm: float | None = None, hidden: int = HIDDEN,
          penultimate: str = "propagated", full_result: bool = False):
    """Fit a two-layer GCN by full-batch descent on masked cross-entropy.

    Early stopping keeps the weights with the best validation accuracy; pass
    ``patience=None`` to disable it and keep the last iterate.
    """
    res = _fit(graph, train_mask, val_mask, epochs, lr, seed, optimizer, patience, clip_norm, 0.0,
               hidden, penultimate)
    return res if full_result else res.model


def rdp_epsilon(noise_multiplier: float, steps: int, delta: float, orders=RDP_ORDERS) -> float:
    """(eps, delta) after ``steps`` full-batch Gaussian mechanisms via Renyi DP."""
    if noise_multiplier == 0:
        return math.inf
    if steps == 0:
        return 0.0
    orders = np.asarray(orders, dtype=np.float64)
    rdp = steps * orders / (2.0 * noise_multiplier ** 2)
    eps = rdp + math.log(1.0 / delta) / (orders - 1.0)
    return float(eps.min())


def noise_for_epsilon(target_eps: float, steps: int, delta: float, lo: float = 1e-3,
                      hi: float = 1e4, tol: float = 1e-6) -> float:
    """Smallest noise multiplier whose accounted epsilon does not exceed ``target_eps``."""
    if rdp_epsilon(hi, steps, delta) > target_eps:
        raise ValueError("target epsilon not reachable within the search range")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if rdp_epsilon(mid, steps, delta) > target_eps:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1 < tol:
            break
    return hi


def train_dp(graph: Graph, train_mask, dp: DpConfig, lr: float = 0.01, seed: int = 0,
             val_mask=None, optimizer: str = "adam", hidden: int = HIDDEN,
             penultimate: str = "propagated", full_result: bool = False):
    """Noisy clipped full-batch training for ``dp.iterations`` steps.

    Returns ``(model, epsilon)``; epsilon is ``inf`` when no noise is added.
    The last iterate is kept since validation-based selection would consume
    private labels outside the accountant.
    """
    res = _fit(graph, train_mask, val_mask, dp.iterations, lr, seed, optimizer, None, dp.clip_norm,
               dp.noise_multiplier * dp.clip_norm, hidden, penultimate)
    eps = rdp_epsilon(dp.noise_multiplier, dp.iterations, dp.delta)
    res.model.meta.update({"dp_epsilon": eps, "dp_delta": dp.delta,
                           "dp_noise_multiplier": dp.noise_multiplier})
    return (res, eps) if full_result else (res.model, eps)
