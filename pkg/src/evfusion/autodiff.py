"""Dense-tensor reverse-mode autodiff engine.

Tensors wrap row-major float64 numpy arrays. Every differentiable
operation records its parents and a backward closure on the output,
forming an acyclic define-by-run tape. ``backward`` walks the tape in
reverse topological order exactly once per node and accumulates
gradients into ``Tensor.grad``.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_node_ids = itertools.count()

# Deliberately corrupts one backward rule when enabled; negative control
# for the gradient-check harness.
_INJECT_BACKWARD_FAULT = False


def set_backward_fault(enabled: bool) -> None:
    global _INJECT_BACKWARD_FAULT
    _INJECT_BACKWARD_FAULT = enabled


class Tensor:
    """A float64 array plus its place in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may be a single row broadcast over a's rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and not (b.shape[0] == 1 and b.shape[1] == a.shape[1]):
        raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")
    data = a.data + b.data

    def backward(g):
        gb = g if b.shape == a.shape else g.sum(axis=0, keepdims=True)
        return g, gb

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data * b.data

    def backward(g):
        return g * b.data, g * a.data

    return _make(data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.T @ g
        if _INJECT_BACKWARD_FAULT:
            gb = gb * 1.5
        return ga, gb

    return _make(data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-form GELU approximation."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner
        return (g * dx,)

    return _make(data, (a,), backward)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction."""
    a = _as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax_rows: non-finite input")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        # row Jacobian diag(s) - s s^T applied to g
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (a,), backward)


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log(sum(exp)), stable; output shape (m, 1)."""
    a = _as_tensor(a)
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    z = e.sum(axis=1, keepdims=True)
    data = m + np.log(z)
    soft = e / z

    def backward(g):
        return (g * soft,)

    return _make(data, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then gain*x + bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    n = x.shape[1]
    if gain.data.size != n or bias.data.size != n:
        raise DimensionError(
            f"layer_norm: gain/bias width must be {n}, got {gain.data.size}/{bias.data.size}")
    g_row = gain.data.reshape(1, n)
    b_row = bias.data.reshape(1, n)
    mu = x.data.mean(axis=1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * g_row + b_row

    def backward(g):
        gy = g * g_row
        mean_gy = gy.mean(axis=1, keepdims=True)
        mean_gy_xhat = (gy * xhat).mean(axis=1, keepdims=True)
        dx = inv * (gy - mean_gy - xhat * mean_gy_xhat)
        dgain = (g * xhat).sum(axis=0, keepdims=True).reshape(gain.shape)
        dbias = g.sum(axis=0, keepdims=True).reshape(bias.shape)
        return dx, dgain, dbias

    return _make(data, (x, gain, bias), backward)


def concat_rows(*parts: Tensor) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    width = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != width:
            raise DimensionError(
                f"concat_rows: widths differ: {p.shape[1]} vs {width}")
    data = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _make(data, parts, backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if not (0 <= start < stop <= a.shape[0]):
        raise ContractError(f"slice_rows: bad range [{start}:{stop}) for {a.shape}")
    data = a.data[start:stop].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _make(data, (a,), backward)


def split_rows(a: Tensor, n_first: int) -> tuple[Tensor, Tensor]:
    """Exact inverse of concat_rows for two blocks."""
    a = _as_tensor(a)
    return slice_rows(a, 0, n_first), slice_rows(a, n_first, a.shape[0])


def concat_cols(*parts: Tensor) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    height = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != height:
            raise DimensionError(
                f"concat_cols: heights differ: {p.shape[0]} vs {height}")
    data = np.concatenate([p.data for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _make(data, parts, backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if not (0 <= start < stop <= a.shape[1]):
        raise ContractError(f"slice_cols: bad range [{start}:{stop}) for {a.shape}")
    data = a.data[:, start:stop].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _make(data, (a,), backward)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over the row axis; (m, n) -> (1, n)."""
    a = _as_tensor(a)
    m = a.shape[0]
    data = a.data.mean(axis=0, keepdims=True)

    def backward(g):
        return (np.repeat(g, m, axis=0) / m,)

    return _make(data, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.array([[a.data.sum()]])

    def backward(g):
        return (np.full_like(a.data, g[0, 0]),)

    return _make(data, (a,), backward)


def take_rows(table: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows of a table (embedding lookup); backward scatter-adds."""
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ContractError("take_rows: indices must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(
            f"take_rows: index out of range for table with {table.shape[0]} rows")
    data = table.data[idx].copy()

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(data, (table,), backward)


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------

def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         weights_sink: list | None = None) -> Tensor:
    """softmax(q k^T / sqrt(width)) v, composed from the primitives above.

    When weights_sink is a list, the row-stochastic attention-weight
    Tensor is appended to it (used by invariant checks).
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"attention: q/k widths differ: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"attention: k/v heights differ: {k.shape} vs {v.shape}")
    logits = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    weights = softmax_rows(logits)
    if weights_sink is not None:
        weights_sink.append(weights)
    return matmul(weights, v)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse-sweep from a scalar loss.

    Accumulates into .grad of every requires_grad tensor reachable from
    the loss and returns {node_id: gradient}. Repeated calls without
    zero_grad accumulate.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}

    # iterative post-order topological sort
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.node_id not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(node.node_id)
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg

    for node in order:
        g = grads.get(node.node_id)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
    return grads


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                      eps: float = 1e-5, rng: np.random.Generator | None = None,
                      max_coords_per_param: int = 8) -> float:
    """Compare analytic gradients of scalar f() against central differences.

    Returns the max over sampled coordinates of
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if not (0.0 < eps <= 1e-2):
        raise ContractError(f"finite_diff_check: eps {eps} outside (0, 1e-2]")
    base1 = float(f().data.reshape(()))
    base2 = float(f().data.reshape(()))
    if base1 != base2:
        raise ContractError("finite_diff_check: f is not deterministic")

    for p in params:
        p.zero_grad()
    loss = f()
    backward(loss)
    rng = rng or np.random.default_rng(0)

    worst = 0.0
    for p in params:
        if p.grad is None:
            raise ContractError("finite_diff_check: parameter received no gradient")
        flat = p.data.reshape(-1)
        n = flat.size
        coords = (np.arange(n) if n <= max_coords_per_param
                  else rng.choice(n, size=max_coords_per_param, replace=False))
        gflat = p.grad.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = float(f().data.reshape(()))
            flat[c] = orig - eps
            fm = float(f().data.reshape(()))
            flat[c] = orig
            numeric = (fp - fm) / (2.0 * eps)
            analytic = gflat[c]
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst
