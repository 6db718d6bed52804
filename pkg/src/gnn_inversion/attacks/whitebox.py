"""White-box edge reconstruction by projected gradient descent on a relaxed adjacency."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..gcn import GcnModel, forward_tensors, node_embeddings
from ..graph import DEGREE_EPS, AdjVector, DensityEstimate, num_pairs, smoothness_terms, vec_to_matrix

log = logging.getLogger(__name__)

UNKNOWN = -1


@dataclass(frozen=True)
class GraphMiConfig:
    alpha: float = 0.001
    beta: float = 0.0001
    lr: float = 0.1
    iterations: int = 100
    trials: int = 20
    density: DensityEstimate | None = None
    label_fraction: float = 1.0
    use_gae: bool = True
    # degree offset inside the smoothness term; 1.0 is the self-loop degree,
    # tiny values make the term flat at the all-zero start point
    degree_eps: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.iterations < 0 or self.trials < 1:
            raise ValueError("iterations must be >= 0 and trials >= 1")
        if not 0 < self.label_fraction <= 1:
            raise ValueError("label_fraction must lie in (0, 1]")


@dataclass
class ReconstructionResult:
    probabilities: AdjVector
    sampled: np.ndarray
    attack_loss_trace: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    scores: np.ndarray | None = None
    queries: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def edge_scores(self) -> np.ndarray:
        """Ranking scores per pair; raw scores when available (no sigmoid saturation)."""
        return self.probabilities.values if self.scores is None else self.scores


def known_labels(labels: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Copy of ``labels`` with all but ``fraction`` of each class replaced by ``UNKNOWN``."""
    labels = np.asarray(labels, dtype=np.int64)
    if fraction >= 1:
        return labels.copy()
    rng = np.random.default_rng(seed)
    out = np.full_like(labels, UNKNOWN)
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        keep = max(1, int(round(fraction * idx.size)))
        out[idx[:keep]] = c
    return out


def _mask(Y_known: np.ndarray) -> np.ndarray:
    mask = np.asarray(Y_known) != UNKNOWN
    if not mask.any():
        raise ValueError("no known labels")
    return mask


def attack_loss_tensor(a: ad.Tensor, X: np.ndarray, Y_known: np.ndarray, model: GcnModel,
                       alpha: float, beta: float, degree_eps: float = DEGREE_EPS) -> ad.Tensor:
    N = X.shape[0]
    A = ad.sym_from_vec(a, N)
    logits, _ = forward_tensors(ad.constant(model.W0), ad.constant(model.W1), A, X, model.penultimate)
    mask = _mask(Y_known)
    labels = np.where(mask, Y_known, 0)
    loss = ad.softmax_cross_entropy(logits, labels, mask)
    if alpha:
        loss = loss + ad.scalar_mul(smoothness_terms(A, X, degree_eps), alpha)
    if beta:
        loss = loss + ad.scalar_mul(ad.l2_norm(a), beta)
    return loss


def attack_loss(a, X: np.ndarray, Y_known: np.ndarray, model: GcnModel, alpha: float, beta: float,
                degree_eps: float = DEGREE_EPS) -> float:
    """Cross-entropy on known labels plus weighted smoothness and L2 sparsity."""
    values = a.values if isinstance(a, AdjVector) else np.asarray(a, dtype=np.float64)
    return float(attack_loss_tensor(ad.Tensor(values), np.asarray(X, dtype=np.float64), Y_known, model,
                                    alpha, beta, degree_eps).data)


def attack_loss_and_grad(values: np.ndarray, X, Y_known, model, alpha, beta, degree_eps=DEGREE_EPS):
    a = ad.Tensor(values, requires_grad=True)
    loss = attack_loss_tensor(a, X, Y_known, model, alpha, beta, degree_eps)
    ad.backward(loss)
    return float(loss.data), a.grad


def project(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def pgd_optimize(model: GcnModel, X: np.ndarray, Y_known: np.ndarray, cfg: GraphMiConfig,
                 trace: list | None = None, init: np.ndarray | None = None,
                 on_step=None) -> AdjVector:
    """Projected gradient descent on the relaxed adjacency, starting from zeros."""
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    a = np.zeros(num_pairs(N)) if init is None else project(np.asarray(init, dtype=np.float64))
    for t in range(cfg.iterations):
        loss, g = attack_loss_and_grad(a, X, Y_known, model, cfg.alpha, cfg.beta, cfg.degree_eps)
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise FloatingPointError(f"non-finite attack gradient at iteration {t} ({bad} entries)")
        if trace is not None:
            trace.append(loss)
        a = project(a - cfg.lr * g)
        if on_step is not None:
            on_step(t, a)
    if trace is not None:
        trace.append(attack_loss(a, X, Y_known, model, cfg.alpha, cfg.beta, cfg.degree_eps))
    return AdjVector(a, N)


def gae_scores(model: GcnModel, a: AdjVector, X: np.ndarray) -> np.ndarray:
    """Inner products of penultimate embeddings for every upper-triangle pair."""
    Z = node_embeddings(model, a, X)
    iu, ju = np.triu_indices(a.num_nodes, 1)
    return np.einsum("kd,kd->k", Z[iu], Z[ju])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gae_postprocess(model: GcnModel, a: AdjVector, X: np.ndarray) -> AdjVector:
    """Edge probabilities sigmoid(Z Z^T) off the diagonal, Z taken from the target model."""
    return AdjVector(_sigmoid(gae_scores(model, a, X)), a.num_nodes)


def sample_edges(weights: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``count`` distinct entries drawn sequentially proportional to ``weights``.

    Uses Gumbel top-k keys; zero-weight entries are only used (uniformly) once
    the positive-weight entries are exhausted.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n = weights.size
    if not 0 <= count <= n:
        raise ValueError(f"cannot draw {count} of {n} entries")
    pos = np.flatnonzero(weights > 0)
    gumbel = rng.gumbel(size=n)
    if pos.size >= count:
        keys = np.log(weights[pos]) + gumbel[pos]
        top = np.argpartition(-keys, count - 1)[:count] if count else np.array([], dtype=np.int64)
        return np.sort(pos[top])
    zero = np.flatnonzero(weights <= 0)
    extra = zero[np.argsort(-gumbel[zero], kind="stable")[:count - pos.size]]
    return np.sort(np.concatenate([pos, extra]))


def random_sample(probs: AdjVector, cfg: GraphMiConfig, model: GcnModel, X: np.ndarray,
                  Y_known: np.ndarray, seed: int, candidate_losses: list | None = None,
                  loss_fn=None) -> np.ndarray:
    """Draw ``cfg.trials`` binary graphs with exactly floor(rho*n) edges and keep the lowest-loss one.

    ``loss_fn`` overrides the white-box attack loss (the black-box attacks
    pass their query-based loss).
    """
    if cfg.density is None:
        raise ValueError("random sampling needs a density estimate")
    n = len(probs)
    m = cfg.density.num_edges(n)
    weights = probs.values
    total = weights.sum()
    if total <= 0:
        log.warning("all-zero edge probabilities; sampling uniformly")
        weights = np.ones(n)
        total = float(n)
    weights = weights / total
    if loss_fn is None:
        def loss_fn(vec):
            return attack_loss(vec, X, Y_known, model, cfg.alpha, cfg.beta, cfg.degree_eps)
    rng = np.random.default_rng(seed)
    trial_rngs = [np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(cfg.trials)]
    best: tuple[float, int] | None = None
    best_vec = None
    for k, trng in enumerate(trial_rngs):
        vec = np.zeros(n)
        vec[sample_edges(weights, m, trng)] = 1.0
        loss = loss_fn(vec)
        if candidate_losses is not None:
            candidate_losses.append(loss)
        if best is None or (loss, k) < best:
            best, best_vec = (loss, k), vec
    return vec_to_matrix(best_vec, probs.num_nodes)


def run_graphmi(model: GcnModel, X: np.ndarray, Y_known: np.ndarray, cfg: GraphMiConfig,
                seed: int = 0) -> ReconstructionResult:
    """PGD, then GAE post-processing, then sampling to a binary adjacency."""
    start = time.perf_counter()
    X = np.asarray(X, dtype=np.float64)
    trace: list[float] = []
    a = pgd_optimize(model, X, Y_known, cfg, trace)
    if cfg.use_gae:
        scores = gae_scores(model, a, X)
        probs = AdjVector(_sigmoid(scores), a.num_nodes)
    else:
        scores, probs = None, a
    sample_losses: list[float] = []
    sampled = random_sample(probs, cfg, model, X, Y_known, seed, sample_losses)
    return ReconstructionResult(probs, sampled, trace, time.perf_counter() - start, scores,
                                extras={"pgd_solution": a.values, "candidate_losses": sample_losses})
