"""Dense float64 tensors with reverse-mode automatic differentiation.

Graphs are built define-by-run: every op returns a new Tensor that holds
references to its parents and a closure propagating gradients to them.
Inside a ``no_grad()`` block no graph is recorded, so the same model code
serves training and inference.

Supported broadcasting is deliberately narrow: elementwise ops require
equal shapes, except ``add`` which also accepts a trailing-dimension bias
vector.  All data is float64, row-major.
"""

from __future__ import annotations

import math

import numpy as np

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_CUBIC = 0.044715
LAYERNORM_EPS = 1e-5


class ShapeError(ValueError):
    """An op received inputs whose shapes it cannot combine."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; the module-level functions do the real work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tensor_slice(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# ---------------------------------------------------------------------------
# ops


def add(a, b) -> Tensor:
    """Elementwise sum; also accepts a trailing-dimension bias as second arg."""
    a, b = _as_tensor(a), _as_tensor(b)
    bias = a.ndim > 1 and b.ndim == 1
    if not bias and a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not match")
    if bias and a.shape[-1] != b.shape[0]:
        raise ShapeError(f"add: bias length {b.shape[0]} does not fit trailing dim of {a.shape}")

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, g.reshape(-1, b.shape[0]).sum(axis=0) if bias else g)

    return _make(a.data + b.data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not match")

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, -g)

    return _make(a.data - b.data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    """Elementwise product of equal-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not match")

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), backward_fn)


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, g * s)

    return _make(a.data * s, (a,), backward_fn)


def matmul(a, b) -> Tensor:
    """Matrix product.  2-D x 2-D, batched ND x ND with equal batch dims,
    or batched ND x 2-D (shared right operand)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims of {a.shape} @ {b.shape} do not match")
    if a.ndim != b.ndim and b.ndim != 2:
        raise ShapeError(f"matmul: batch ranks of {a.shape} @ {b.shape} do not match")
    if a.ndim == b.ndim and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims of {a.shape} @ {b.shape} differ")

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k, n = b.shape
                _accum(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(a.data @ b.data, (a, b), backward_fn)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (a,), backward_fn)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    y = np.exp(out)

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, g - y * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), backward_fn)


def layernorm(x, gamma, beta, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm: gamma/beta must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward_fn(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            _accum(
                x,
                inv
                * (
                    gx
                    - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                ),
            )

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward_fn)


def gelu(a) -> Tensor:
    """Tanh-form GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    a = _as_tensor(a)
    x = a.data
    inner = _SQRT_2_OVER_PI * (x + _GELU_CUBIC * x**3)
    t = np.tanh(inner)

    def backward_fn(g):
        if a.requires_grad:
            dt = (1.0 - t * t) * _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_CUBIC * x * x)
            _accum(a, g * (0.5 * (1.0 + t) + 0.5 * x * dt))

    return _make(0.5 * x * (1.0 + t), (a,), backward_fn)


def relu(a) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, g * (a.data > 0))

    return _make(np.maximum(a.data, 0.0), (a,), backward_fn)


def embedding(table, ids) -> Tensor:
    """Gather rows of a [V, D] table by integer id sequence."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: id out of range for table with {table.shape[0]} rows")

    def backward_fn(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _make(table.data[ids], (table,), backward_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward_fn)


def tensor_slice(a, key) -> Tensor:
    """Basic slicing (ints and unit-step slices)."""
    a = _as_tensor(a)

    def backward_fn(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[key] += g

    return _make(a.data[key], (a,), backward_fn)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward_fn)


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inverse = np.argsort(axes)

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward_fn)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g):
        if a.requires_grad:
            if axis is None:
                _accum(a, np.full_like(a.data, g))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                _accum(a, np.broadcast_to(gg, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward_fn)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def cross_entropy(logits, targets, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of integer targets under softmax(logits).

    logits: [T, V] (or [V] for a single position); targets: [T] int ids.
    """
    logits = _as_tensor(logits)
    squeeze = logits.ndim == 1
    data = logits.data[None, :] if squeeze else logits.data
    tgt = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n, v = data.shape
    if tgt.shape != (n,):
        raise ShapeError(f"cross_entropy: targets shape {tgt.shape} does not match {n} rows")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= v):
        raise ShapeError(f"cross_entropy: target id out of range for {v} classes")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"cross_entropy: unknown reduction {reduction!r}")

    shifted = data - data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    losses = -logp[rows, tgt]
    denom = n if reduction == "mean" else 1

    def backward_fn(g):
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[rows, tgt] -= 1.0
            grad *= float(g) / denom
            _accum(logits, grad[0] if squeeze else grad)

    return _make(losses.sum() / denom, (logits,), backward_fn)


# ---------------------------------------------------------------------------
# backward pass


def backward(out: Tensor, retain_graph: bool = False) -> None:
    """Propagate gradients from a scalar output to all requires_grad inputs.

    The graph is freed afterwards unless ``retain_graph`` is set; a freed
    graph cannot be backpropagated again.
    """
    if out.data.ndim != 0:
        raise ValueError(f"backward: output must be scalar, got shape {out.shape}")
    if not out.requires_grad:
        raise ValueError("backward: output does not require grad")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    out.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node.grad = None  # interior buffers are scratch; only leaves keep grads
        if not retain_graph:
            node._parents = ()
            node._backward = None
