"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

Small tape-free engine: each Tensor remembers its parents and a closure
producing parent gradients.  backward() topologically sorts the graph from a
scalar root and accumulates gradients into every node that requires them.
Gradients accumulate across repeated backward() calls; zero explicitly.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from scipy.special import logsumexp as _sp_logsumexp


class Tensor:
    """Node in the computation graph.

    value : float64 ndarray (scalars stored as 0-d arrays)
    grad  : same-shape ndarray, allocated lazily on first backward pass
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, *, requires_grad=False, parents=(), backward=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        # constants never need their upstream recorded
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.value.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all real work happens in the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x, name=None):
    return Tensor(x, requires_grad=False, name=name)


def leaf(x, name=None):
    return Tensor(x, requires_grad=True, name=name)


def _unbroadcast(g, shape):
    """Reduce gradient g of a broadcast result back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(root):
    """Run reverse-mode accumulation from a scalar root.

    Raises ValueError if root is not a single-element tensor.  Gradients add
    into existing .grad buffers; call zero_grad (or rebuild leaves) between
    optimization steps.
    """
    if root.value.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.value.shape}")
    # iterative topological order; recursion would overflow on deep graphs
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    # each call computes one full pass locally, then adds it into .grad, so
    # repeated calls accumulate exactly one gradient per call
    local = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g_out = local.get(id(node))
        if g_out is None or node._backward is None:
            continue
        gs = node._backward(g_out)
        for parent, g in zip(node._parents, gs):
            if g is None or not parent.requires_grad:
                continue
            acc = local.get(id(parent))
            local[id(parent)] = g if acc is None else acc + g
    for node in order:
        g = local.get(id(node))
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.zeros_like(node.value)
        node.grad += g


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_val = a.value + b.value

    def back(g):
        return (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape))

    return Tensor(out_val, parents=(a, b), backward=back)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_val = a.value - b.value

    def back(g):
        return (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape))

    return Tensor(out_val, parents=(a, b), backward=back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_val = a.value * b.value

    def back(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return Tensor(out_val, parents=(a, b), backward=back)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_val = a.value / b.value

    def back(g):
        return (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        )

    return Tensor(out_val, parents=(a, b), backward=back)


def neg(a):
    a = as_tensor(a)

    def back(g):
        return (-g,)

    return Tensor(-a.value, parents=(a,), backward=back)


def matmul(a, b):
    """2-D matrix product only; vectors must be reshaped by the caller."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out_val = a.value @ b.value

    def back(g):
        return (g @ b.value.T, a.value.T @ g)

    return Tensor(out_val, parents=(a, b), backward=back)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_val = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return Tensor(out_val, parents=(a,), backward=back)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def exp(a):
    a = as_tensor(a)
    out_val = np.exp(a.value)

    def back(g):
        return (g * out_val,)

    return Tensor(out_val, parents=(a,), backward=back)


def log(a):
    a = as_tensor(a)
    out_val = np.log(a.value)

    def back(g):
        return (g / a.value,)

    return Tensor(out_val, parents=(a,), backward=back)


def log1p(a):
    """log(1 + x), accurate near x = 0."""
    a = as_tensor(a)
    out_val = np.log1p(a.value)

    def back(g):
        return (g / (1.0 + a.value),)

    return Tensor(out_val, parents=(a,), backward=back)


def tabs(a):
    a = as_tensor(a)
    out_val = np.abs(a.value)

    def back(g):
        return (g * np.sign(a.value),)

    return Tensor(out_val, parents=(a,), backward=back)


def tanh(a):
    a = as_tensor(a)
    out_val = np.tanh(a.value)

    def back(g):
        return (g * (1.0 - out_val * out_val),)

    return Tensor(out_val, parents=(a,), backward=back)


def sigmoid(a):
    a = as_tensor(a)
    out_val = expit(a.value)

    def back(g):
        return (g * out_val * (1.0 - out_val),)

    return Tensor(out_val, parents=(a,), backward=back)


def softplus(a):
    """log(1 + e^x) computed as logaddexp(0, x); derivative is sigmoid."""
    a = as_tensor(a)
    out_val = np.logaddexp(0.0, a.value)

    def back(g):
        return (g * expit(a.value),)

    return Tensor(out_val, parents=(a,), backward=back)


def relu(a):
    a = as_tensor(a)
    out_val = np.maximum(a.value, 0.0)

    def back(g):
        return (g * (a.value > 0.0),)

    return Tensor(out_val, parents=(a,), backward=back)


def clip(a, lo, hi):
    """Clamp values; gradient is 1 strictly inside [lo, hi], 0 outside."""
    a = as_tensor(a)
    out_val = np.clip(a.value, lo, hi)

    def back(g):
        return (g * ((a.value >= lo) & (a.value <= hi)),)

    return Tensor(out_val, parents=(a,), backward=back)


def logaddexp(a, b):
    """Elementwise log(e^a + e^b), the stable two-branch log-sum-exp."""
    a, b = as_tensor(a), as_tensor(b)
    out_val = np.logaddexp(a.value, b.value)

    def back(g):
        wa = expit(a.value - b.value)
        return (
            _unbroadcast(g * wa, a.value.shape),
            _unbroadcast(g * (1.0 - wa), b.value.shape),
        )

    return Tensor(out_val, parents=(a, b), backward=back)


def logsumexp(a, axis, keepdims=False):
    a = as_tensor(a)
    out_val = _sp_logsumexp(a.value, axis=axis, keepdims=keepdims)

    def back(g):
        ref = out_val if keepdims else np.expand_dims(out_val, axis)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (gg * np.exp(a.value - ref),)

    return Tensor(np.asarray(out_val), parents=(a,), backward=back)


def concat(parts, axis):
    parts = [as_tensor(p) for p in parts]
    out_val = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out_val, parents=tuple(parts), backward=back)


def reshape(a, shape):
    a = as_tensor(a)
    out_val = a.value.reshape(shape)

    def back(g):
        return (g.reshape(a.value.shape),)

    return Tensor(out_val, parents=(a,), backward=back)


def repeat_rows(a, k):
    """Repeat each row k times: (n, d) -> (n*k, d)."""
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise ValueError("repeat_rows expects a 2-D tensor")
    n, d = a.value.shape
    out_val = np.repeat(a.value, k, axis=0)

    def back(g):
        return (g.reshape(n, k, d).sum(axis=1),)

    return Tensor(out_val, parents=(a,), backward=back)


def take_along_rows(a, idx):
    """Gather columns per row: out[i, j] = a[i, idx[i, j]].

    idx is a constant integer array; the backward pass scatter-adds, so
    repeated indices within a row are handled correctly (this is the tile
    operation used to lay a weekly profile onto a day grid).
    """
    a = as_tensor(a)
    idx = np.asarray(idx)
    if a.value.ndim != 2 or idx.ndim != 2 or idx.shape[0] != a.value.shape[0]:
        raise ValueError("take_along_rows expects (n, d) tensor and (n, m) index")
    rows = np.arange(a.value.shape[0])[:, None]
    out_val = a.value[rows, idx]

    def back(g):
        out = np.zeros_like(a.value)
        np.add.at(out, (np.broadcast_to(rows, idx.shape), idx), g)
        return (out,)

    return Tensor(out_val, parents=(a,), backward=back)


def getitem(a, key):
    """Basic (slice/int) indexing; backward scatters into a zero buffer."""
    a = as_tensor(a)
    out_val = a.value[key]

    def back(g):
        out = np.zeros_like(a.value)
        out[key] += g
        return (out,)

    return Tensor(out_val, parents=(a,), backward=back)
