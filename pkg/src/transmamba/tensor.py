"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every operation returns a fresh ``Tensor``
holding references to its inputs and a closure that routes the output
gradient back to them.  ``backward()`` on a scalar loss topologically
sorts the recorded graph and runs the closures in reverse.

Storage and accumulation are both 64-bit.  Tensors are treated as
immutable after construction except for gradient accumulation.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible; the message names the offending dim."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # ------------------------------------------------------------------
    # basic introspection
    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # autodiff driver
    # ------------------------------------------------------------------
    def backward(self):
        """Populate ``grad`` on every reachable tensor with requires_grad."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; implementations live as module functions below
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

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    """Build an op result; records the graph only under grad mode."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = req
    if req:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data + b.data, (a, b), None)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data - b.data, (a, b), None)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data * b.data, (a, b), None)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data / b.data, (a, b), None)

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = _make(-a.data, (a,), None)
    out._backward = (lambda g: _accum(a, -g)) if out.requires_grad else None
    return out


def texp(a) -> Tensor:
    a = as_tensor(a)
    out = _make(np.exp(a.data), (a,), None)
    out._backward = (lambda g: _accum(a, g * out.data)) if out.requires_grad else None
    return out


def tsqrt(a) -> Tensor:
    """Elementwise square root; subgradient 0 is used at exactly 0."""
    a = as_tensor(a)
    root = np.sqrt(a.data)
    out = _make(root, (a,), None)

    def bwd(g):
        safe = np.where(root > 0.0, root, np.inf)
        _accum(a, g * 0.5 / safe)

    out._backward = bwd if out.requires_grad else None
    return out


def tabs(a) -> Tensor:
    a = as_tensor(a)
    out = _make(np.abs(a.data), (a,), None)
    out._backward = (lambda g: _accum(a, g * np.sign(a.data))) if out.requires_grad else None
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = _make(np.maximum(a.data, 0.0), (a,), None)
    out._backward = (lambda g: _accum(a, g * (a.data > 0.0))) if out.requires_grad else None
    return out


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    pos = x >= 0
    z = np.empty_like(x)
    z[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    z[~pos] = e / (1.0 + e)
    return z


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_stable(a.data)
    out = _make(s, (a,), None)
    out._backward = (lambda g: _accum(a, g * s * (1.0 - s))) if out.requires_grad else None
    return out


def silu(a) -> Tensor:
    """x * sigmoid(x); derivative s * (1 + x * (1 - s))."""
    a = as_tensor(a)
    s = _sigmoid_stable(a.data)
    out = _make(a.data * s, (a,), None)
    out._backward = (lambda g: _accum(a, g * s * (1.0 + a.data * (1.0 - s)))) if out.requires_grad else None
    return out


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input is inside."""
    a = as_tensor(a)
    out = _make(np.clip(a.data, lo, hi), (a,), None)

    def bwd(g):
        _accum(a, g * ((a.data >= lo) & (a.data <= hi)))

    out._backward = bwd if out.requires_grad else None
    return out


# ----------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    out = _make(a.data.sum(axis=ax, keepdims=keepdims), (a,), None)

    def bwd(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    out._backward = bwd if out.requires_grad else None
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    count = a.data.size if ax is None else int(np.prod([a.data.shape[i] for i in ax]))
    out = _make(a.data.mean(axis=ax, keepdims=keepdims), (a,), None)

    def bwd(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        _accum(a, np.broadcast_to(g / count, a.data.shape).copy())

    out._backward = bwd if out.requires_grad else None
    return out


def tmax(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; ties share the gradient equally."""
    a = as_tensor(a)
    ax = axis % a.ndim
    kept = a.data.max(axis=ax, keepdims=True)
    out = _make(kept if keepdims else kept.squeeze(ax), (a,), None)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        mask = (a.data == kept).astype(np.float64)
        mask /= mask.sum(axis=ax, keepdims=True)
        _accum(a, g * mask)

    out._backward = bwd if out.requires_grad else None
    return out


def softmax(a, axis: int = -1) -> Tensor:
    """Row-stochastic softmax along `axis`, computed with max subtraction."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _make(s, (a,), None)

    def bwd(g):
        _accum(a, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    out._backward = bwd if out.requires_grad else None
    return out


# ----------------------------------------------------------------------
# shape manipulation
# ----------------------------------------------------------------------
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.data.shape
    out = _make(a.data.reshape(shape), (a,), None)
    out._backward = (lambda g: _accum(a, g.reshape(orig))) if out.requires_grad else None
    return out


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = _make(a.data.transpose(axes), (a,), None)
    out._backward = (lambda g: _accum(a, g.transpose(inv))) if out.requires_grad else None
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.data.shape[ax] for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), None)

    def bwd(g):
        offset = 0
        for t, s in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(offset, offset + s)
            _accum(t, g[tuple(sl)])
            offset += s

    out._backward = bwd if out.requires_grad else None
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in map(as_tensor, tensors)]
    return concat(expanded, axis)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    ax = axis % a.ndim
    sl = [slice(None)] * a.ndim
    sl[ax] = slice(start, stop)
    sl = tuple(sl)
    out = _make(a.data[sl].copy(), (a,), None)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        _accum(a, full)

    out._backward = bwd if out.requires_grad else None
    return out


def chunk(a, n: int, axis: int = 0) -> list[Tensor]:
    a = as_tensor(a)
    ax = axis % a.ndim
    total = a.data.shape[ax]
    if total % n:
        raise ShapeError(f"axis {ax} of extent {total} is not divisible into {n} chunks")
    step = total // n
    return [slice_axis(a, ax, i * step, (i + 1) * step) for i in range(n)]


def flip(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(ax % a.ndim for ax in (axes if isinstance(axes, (tuple, list)) else (axes,)))
    out = _make(np.flip(a.data, axes).copy(), (a,), None)
    out._backward = (lambda g: _accum(a, np.flip(g, axes))) if out.requires_grad else None
    return out


def gather_cols(a, index: np.ndarray) -> Tensor:
    """Reorder the last axis by a permutation: out[..., j] = a[..., index[j]]."""
    a = as_tensor(a)
    index = _check_perm(index, a.data.shape[-1])
    out = _make(a.data[..., index].copy(), (a,), None)

    def bwd(g):
        full = np.empty_like(a.data)
        full[..., index] = g
        _accum(a, full)

    out._backward = bwd if out.requires_grad else None
    return out


def scatter_cols(a, index: np.ndarray) -> Tensor:
    """Inverse of gather_cols with the same permutation."""
    a = as_tensor(a)
    index = _check_perm(index, a.data.shape[-1])
    return gather_cols(a, np.argsort(index, kind="stable"))


def _check_perm(index, n: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    if index.shape != (n,):
        raise ShapeError(f"index length {index.shape} does not match axis extent {n}")
    counts = np.bincount(index, minlength=n)
    if index.min() < 0 or index.max() >= n or not np.all(counts == 1):
        raise ValueError("index is not a permutation of 0..L-1")
    return index


# ----------------------------------------------------------------------
# matmul
# ----------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs tensors with at least 2 dims")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dims disagree: {a.data.shape[-1]} (lhs last) vs {b.data.shape[-2]} (rhs second-to-last)"
        )
    out = _make(np.matmul(a.data, b.data), (a, b), None)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    out._backward = bwd if out.requires_grad else None
    return out
