"""Hard-label query oracle and zeroth-order projected gradient attack."""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from ..gcn import GcnModel, predict_hard
from ..graph import DEGREE_EPS, AdjVector, DensityEstimate, normalized_laplacian_smoothness, num_pairs, vec_to_matrix
from .whitebox import UNKNOWN, GraphMiConfig, ReconstructionResult, project, random_sample


class HardLabelOracle:
    """Counts every query made against a model that only reveals argmax labels."""

    def __init__(self, model: GcnModel, features: np.ndarray):
        self._model = model
        self._features = np.asarray(features, dtype=np.float64)
        self._lock = threading.Lock()
        self.query_count = 0
        self.elapsed = 0.0

    @property
    def num_nodes(self) -> int:
        return self._features.shape[0]

    def predict(self, A) -> np.ndarray:
        if isinstance(A, AdjVector):
            A = vec_to_matrix(A)
        start = time.perf_counter()
        labels = predict_hard(self._model, A, self._features)
        with self._lock:
            self.query_count += 1
            self.elapsed += time.perf_counter() - start
        return labels

    def accuracy(self, A, Y_known: np.ndarray) -> float:
        mask = np.asarray(Y_known) != UNKNOWN
        pred = self.predict(A)
        return float(np.mean(pred[mask] == np.asarray(Y_known)[mask]))


@dataclass(frozen=True)
class GeConfig:
    mu: float = 0.01
    q: int = 100
    lr: float = 0.1
    iterations: int = 100
    alpha: float = 0.001
    beta: float = 0.0001
    density: DensityEstimate | None = None
    trials: int = 20
    degree_eps: float = 1.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.q < 1:
            raise ValueError("q must be at least 1")
        if self.lr <= 0 or self.iterations < 0:
            raise ValueError("lr must be positive and iterations non-negative")

    def sampling_config(self) -> GraphMiConfig:
        return GraphMiConfig(alpha=self.alpha, beta=self.beta, lr=self.lr, iterations=self.iterations,
                             trials=self.trials, density=self.density, degree_eps=self.degree_eps)


def blackbox_loss(a, X: np.ndarray, Y_known: np.ndarray, oracle: HardLabelOracle, alpha: float,
                  beta: float, degree_eps: float = DEGREE_EPS) -> float:
    """Error rate on known labels from one oracle query, plus smoothness and L2 sparsity."""
    values = a.values if isinstance(a, AdjVector) else np.asarray(a, dtype=np.float64)
    N = oracle.num_nodes
    loss = 1.0 - oracle.accuracy(vec_to_matrix(values, N), Y_known)
    if alpha:
        loss += alpha * normalized_laplacian_smoothness(values, X, degree_eps)
    if beta:
        loss += beta * float(np.linalg.norm(values))
    return loss


def unit_directions(rng: np.random.Generator, q: int, d: int) -> np.ndarray:
    """``q`` directions uniform on the unit sphere in R^d (normalized Gaussians)."""
    u = rng.standard_normal((q, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def estimate_gradient(a: np.ndarray, loss_fn, mu: float, q: int, seed) -> np.ndarray:
    """Two-point random-direction gradient estimate averaged over ``q`` directions.

    Calls ``loss_fn`` exactly ``2q`` times.
    """
    a = np.asarray(a, dtype=np.float64)
    d = a.size
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    U = unit_directions(rng, q, d)
    coef = np.empty(q)
    for j in range(q):
        coef[j] = (loss_fn(a + mu * U[j]) - loss_fn(a - mu * U[j])) / (2.0 * mu)
    return (d / q) * (coef @ U)


def rectified_gradient(a: np.ndarray, g: np.ndarray, lr: float) -> np.ndarray:
    return (a - project(a - lr * g)) / lr


def run_gradient_estimation(oracle: HardLabelOracle, X: np.ndarray, Y_known: np.ndarray, cfg: GeConfig,
                            seed: int = 0) -> ReconstructionResult:
    """Projected descent driven by query-only gradient estimates, then sampling.

    Perturbed query points are clamped into the unit box so the oracle only
    ever sees valid weighted graphs.
    """
    start = time.perf_counter()
    q0 = oracle.query_count
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]

    def loss_fn(v):
        return blackbox_loss(project(v), X, Y_known, oracle, cfg.alpha, cfg.beta, cfg.degree_eps)

    rng = np.random.default_rng(seed)
    a = np.zeros(num_pairs(N))
    rect = []
    for _ in range(cfg.iterations):
        g = estimate_gradient(a, loss_fn, cfg.mu, cfg.q, rng)
        rect.append(float(np.linalg.norm(rectified_gradient(a, g, cfg.lr))))
        a = project(a - cfg.lr * g)
    probs = AdjVector(a, N)
    sampled = random_sample(probs, cfg.sampling_config(), None, X, Y_known, seed + 1, loss_fn=loss_fn)
    return ReconstructionResult(probs, sampled, [], time.perf_counter() - start,
                                queries=oracle.query_count - q0,
                                extras={"rectified_grad_norm": rect})
