"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations the GCN, the attack losses and the Q-networks need are
provided. Broadcasting is restricted to three cases: equal shapes, a 0-d
scalar against anything, and equal-rank operands whose mismatching axes have
size 1 (explicit ``reshape`` is required to get there), plus the trailing
vector case ``(..., k) op (k,)``.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "tensor",
    "constant",
    "add",
    "sub",
    "mul",
    "scalar_mul",
    "matmul",
    "relu",
    "sigmoid",
    "rsqrt",
    "sqrt",
    "log",
    "reduce_sum",
    "mean",
    "l2_norm",
    "softmax_cross_entropy",
    "reshape",
    "transpose",
    "concat",
    "take_rows",
    "sym_from_vec",
    "add_identity",
    "backward",
    "build_tape",
]

_ids = itertools.count()


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "uid", "op")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = backward_fn
        self.uid = next(_ids)
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, 1.0 / other)
        return NotImplemented


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)


def _check_broadcast(sa: tuple, sb: tuple, op: str) -> tuple:
    if sa == sb:
        return sa
    if sa == () or sb == ():
        return sb if sa == () else sa
    if len(sb) == 1 and len(sa) >= 1 and sa[-1] == sb[0]:
        return sa
    if len(sa) == 1 and len(sb) >= 1 and sb[-1] == sa[0]:
        return sb
    if len(sa) == len(sb) and all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb)):
        return tuple(max(x, y) for x, y in zip(sa, sb))
    raise ShapeError(f"{op}: cannot combine shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    if len(shape) < g.ndim:
        g = g.reshape(-1, *shape).sum(axis=0) if len(shape) == 1 else g.sum(axis=tuple(range(g.ndim - len(shape))))
    axes = tuple(i for i, (s, gs) in enumerate(zip(shape, g.shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product."""
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def scalar_mul(a, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scalar_mul")


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    # split form avoids overflow in exp for large |x|
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def rsqrt(a) -> Tensor:
    a = _wrap(a)
    if np.any(a.data <= 0):
        raise ValueError("rsqrt of non-positive value")
    out = a.data ** -0.5
    return _make(out, (a,), lambda g: (g * -0.5 * out ** 3,), "rsqrt")


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
        return (g * d,)

    return _make(out, (a,), bw, "sqrt")


def log(a) -> Tensor:
    a = _wrap(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


# -- reductions ------------------------------------------------------------


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    if axis is None:
        return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    ax = axis % a.ndim

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return _make(a.data.sum(axis=ax), (a,), bw, "sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = _wrap(a)
    count = a.data.size if axis is None else a.shape[axis]
    return scalar_mul(reduce_sum(a, axis), 1.0 / count)


def l2_norm(a) -> Tensor:
    """Euclidean norm of all entries; the subgradient at zero is taken as 0."""
    a = _wrap(a)
    nrm = float(np.sqrt(np.sum(a.data * a.data)))

    def bw(g):
        if nrm == 0.0:
            return (np.zeros_like(a.data),)
        return (g * a.data / nrm,)

    return _make(np.asarray(nrm), (a,), bw, "l2_norm")


def softmax_cross_entropy(logits, labels, mask=None) -> Tensor:
    """Mean cross-entropy over the rows selected by ``mask``.

    ``logits`` is (N, c); ``labels`` integer (N,); ``mask`` boolean (N,) or None
    for all rows.
    """
    logits = _wrap(logits)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (N, c) logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("softmax_cross_entropy: empty mask")
    z = logits.data[idx]
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    y = labels[idx]
    losses = logsum - z[np.arange(idx.size), y]
    probs = np.exp(z - logsum[:, None])

    def bw(g):
        full = np.zeros_like(logits.data)
        d = probs.copy()
        d[np.arange(idx.size), y] -= 1.0
        full[idx] = d * (g / idx.size)
        return (full,)

    return _make(np.asarray(losses.mean()), (logits,), bw, "softmax_ce")


# -- shape / linear algebra ------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with ``np.matmul`` batching; vectors are not promoted."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")
    if a.ndim == 2 and b.ndim > 2:
        raise ShapeError("matmul of a 2-d left operand with a batched right operand is not supported")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        if gb.ndim > bd.ndim:
            gb = gb.sum(axis=tuple(range(gb.ndim - bd.ndim)))
        return ga, gb

    return _make(ad @ bd, (a, b), bw, "matmul")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _wrap(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _wrap(a)
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [_wrap(p) for p in parts]
    ndim = parts[0].ndim
    ax = axis % ndim
    for p in parts[1:]:
        if p.ndim != ndim or p.shape[:ax] + p.shape[ax + 1:] != parts[0].shape[:ax] + parts[0].shape[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {[q.shape for q in parts]}")
    sizes = [p.shape[ax] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([p.data for p in parts], axis=ax), tuple(parts), bw, "concat")


def take_rows(a, index, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    a = _wrap(a)
    index = np.asarray(index, dtype=np.int64)
    ax = axis % a.ndim
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        moved = np.moveaxis(full, ax, 0)
        np.add.at(moved, index, np.moveaxis(g, ax, 0))
        return (full,)

    return _make(np.take(a.data, index, axis=ax), (a,), bw, "take")


def _triu_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def sym_from_vec(v, n_nodes: int) -> Tensor:
    """Scatter an upper-triangle vector into a symmetric zero-diagonal matrix."""
    v = _wrap(v)
    iu, ju = _triu_index(n_nodes)
    if v.shape != (iu.size,):
        raise ShapeError(f"sym_from_vec: expected length {iu.size} for N={n_nodes}, got {v.shape}")
    out = np.zeros((n_nodes, n_nodes))
    out[iu, ju] = v.data
    out[ju, iu] = v.data
    return _make(out, (v,), lambda g: (g[iu, ju] + g[ju, iu],), "sym_from_vec")


def add_identity(a) -> Tensor:
    """A + I on the last two axes (square)."""
    a = _wrap(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"add_identity needs square matrices, got {a.shape}")
    return _make(a.data + np.eye(a.shape[-1]), (a,), lambda g: (g,), "add_identity")


# -- backward --------------------------------------------------------------


class Tape:
    """Nodes reachable from a root, in topological order (inputs first)."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t.requires_grad and not t.parents]


def build_tape(root: Tensor) -> Tape:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.uid in seen:
            continue
        seen.add(node.uid)
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and p.uid not in seen:
                stack.append((p, False))
    return Tape(order)


def backward(loss: Tensor, accumulate: bool = False) -> dict[int, np.ndarray]:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``.

    Returns a mapping from leaf uid to its gradient. Leaf gradients are
    overwritten unless ``accumulate`` is set.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    tape = build_tape(loss)
    grads: dict[int, np.ndarray] = {loss.uid: np.ones(())}
    for node in reversed(tape.nodes):
        g = grads.pop(node.uid, None)
        if g is None:
            continue
        if not node.parents:
            if accumulate and node.grad is not None:
                node.grad = node.grad + g
            else:
                node.grad = g
            grads[node.uid] = node.grad
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.uid in grads:
                grads[parent.uid] = grads[parent.uid] + pg
            else:
                grads[parent.uid] = np.array(pg, dtype=np.float64)
    return {t.uid: t.grad for t in tape.leaves()}


def grad_of(fn: Callable[..., Tensor], *arrays: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Evaluate ``fn`` on fresh leaves built from ``arrays`` and return (value, grads)."""
    leaves = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in arrays]
    out = fn(*leaves)
    backward(out)
    return float(out.data), [np.zeros_like(l.data) if l.grad is None else l.grad for l in leaves]


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
