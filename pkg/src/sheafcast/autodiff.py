"""Reverse-mode automatic differentiation over numpy arrays.

A small tape-based engine: ``Tensor`` wraps a float64 ndarray, every
operation records a backward closure, and ``Tensor.backward()`` walks the
tape in reverse topological order accumulating gradients. Float64 is used
throughout so analytic gradients can be checked against central finite
differences at tight tolerances.

Only the operations the forecasting pipeline needs are implemented:
elementwise arithmetic with broadcasting, matmul, reductions, sigmoid/tanh,
absolute value, a gradient-safe sqrt, slicing/gather, concatenation, and
batched per-edge matrix-vector products used by the sheaf operators.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ShapeMismatchError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An ndarray with an optional gradient tape behind it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # Make `ndarray <op> Tensor` defer to the reflected Tensor operator
    # instead of numpy attempting elementwise coercion.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
        """Backpropagate from this tensor; accumulates into `.grad` fields."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatchError("backward() without grad needs a scalar output")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        # Iterative post-order DFS: deep tapes (unrolled RK4 over an LSTM)
        # overflow Python's recursion limit.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # ------------------------------------------------------------------
    # operators
    # ------------------------------------------------------------------
    def __add__(self, other):
        other = lift(other)
        out = _make(self.data + other.data, (self, other))
        if out.requires_grad:
            def backward():
                if self.requires_grad:
                    self._accumulate(out.grad)
                if other.requires_grad:
                    other._accumulate(out.grad)
            out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = lift(other)
        out = _make(self.data * other.data, (self, other))
        if out.requires_grad:
            def backward():
                if self.requires_grad:
                    self._accumulate(other.data * out.grad)
                if other.requires_grad:
                    other._accumulate(self.data * out.grad)
            out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = _make(-self.data, (self,))
        if out.requires_grad:
            out._backward = lambda: self._accumulate(-out.grad)
        return out

    def __sub__(self, other):
        return self + (-lift(other))

    def __rsub__(self, other):
        return lift(other) + (-self)

    def __truediv__(self, other):
        other = lift(other)
        out = _make(self.data / other.data, (self, other))
        if out.requires_grad:
            def backward():
                if self.requires_grad:
                    self._accumulate(out.grad / other.data)
                if other.requires_grad:
                    other._accumulate(-self.data / (other.data ** 2) * out.grad)
            out._backward = backward
        return out

    def __rtruediv__(self, other):
        return lift(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = _make(self.data ** exponent, (self,))
        if out.requires_grad:
            def backward():
                self._accumulate(exponent * self.data ** (exponent - 1) * out.grad)
            out._backward = backward
        return out

    def __matmul__(self, other):
        other = lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeMismatchError("matmul supports 2-D operands only")
        out = _make(self.data @ other.data, (self, other))
        if out.requires_grad:
            def backward():
                if self.requires_grad:
                    self._accumulate(out.grad @ other.data.T)
                if other.requires_grad:
                    other._accumulate(self.data.T @ out.grad)
            out._backward = backward
        return out

    def __rmatmul__(self, other):
        return lift(other) @ self

    def __getitem__(self, key):
        out = _make(self.data[key], (self,))
        if out.requires_grad:
            advanced = _has_index_array(key)
            def backward():
                g = np.zeros_like(self.data)
                if advanced:
                    np.add.at(g, key, out.grad)
                else:
                    g[key] += out.grad
                self._accumulate(g)
            out._backward = backward
        return out

    # ------------------------------------------------------------------
    # reductions and shaping
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        out = _make(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def backward():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.data.shape))
            out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        out = _make(self.data.reshape(*shape), (self,))
        if out.requires_grad:
            out._backward = lambda: self._accumulate(out.grad.reshape(self.data.shape))
        return out


def lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def _has_index_array(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in items)


# ----------------------------------------------------------------------
# elementwise functions
# ----------------------------------------------------------------------
def sigmoid(t: Tensor) -> Tensor:
    t = lift(t)
    # Stable logistic: exp of a non-positive argument on both branches.
    x = t.data
    e = np.exp(-np.abs(x))
    val = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = _make(val, (t,))
    if out.requires_grad:
        out._backward = lambda: t._accumulate(val * (1.0 - val) * out.grad)
    return out


def tanh(t: Tensor) -> Tensor:
    t = lift(t)
    val = np.tanh(t.data)
    out = _make(val, (t,))
    if out.requires_grad:
        out._backward = lambda: t._accumulate((1.0 - val ** 2) * out.grad)
    return out


def absolute(t: Tensor) -> Tensor:
    t = lift(t)
    out = _make(np.abs(t.data), (t,))
    if out.requires_grad:
        out._backward = lambda: t._accumulate(np.sign(t.data) * out.grad)
    return out


def sqrt(t: Tensor) -> Tensor:
    """Square root with a gradient clamped near zero (subgradient 0 at 0)."""
    t = lift(t)
    val = np.sqrt(t.data)
    out = _make(val, (t,))
    if out.requires_grad:
        def backward():
            denom = np.maximum(val, 1e-30)
            g = np.where(t.data > 0, 0.5 / denom, 0.0)
            t._accumulate(g * out.grad)
        out._backward = backward
    return out


def concatenate(tensors, axis: int = 0) -> Tensor:
    tensors = [lift(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * out.grad.ndim
                    idx[axis] = slice(lo, hi)
                    t._accumulate(out.grad[tuple(idx)])
        out._backward = backward
    return out


# ----------------------------------------------------------------------
# graph gather/scatter and batched per-edge products
# ----------------------------------------------------------------------
def index_add_rows(source: Tensor, index: np.ndarray, n_rows: int) -> Tensor:
    """Scatter-add rows of `source` into an (n_rows, ...) zero tensor."""
    source = lift(source)
    index = np.asarray(index, dtype=np.intp)
    data = np.zeros((n_rows,) + source.data.shape[1:], dtype=np.float64)
    np.add.at(data, index, source.data)
    out = _make(data, (source,))
    if out.requires_grad:
        out._backward = lambda: source._accumulate(out.grad[index])
    return out


def edge_matvec(mats: Tensor, vecs: Tensor) -> Tensor:
    """Per-edge product: (E, m, d) x (E, d) -> (E, m)."""
    mats, vecs = lift(mats), lift(vecs)
    if mats.data.ndim != 3 or vecs.data.ndim != 2 or mats.data.shape[::2] != (
            vecs.data.shape[0], vecs.data.shape[1]):
        raise ShapeMismatchError(
            f"edge_matvec: got {mats.data.shape} and {vecs.data.shape}")
    out = _make((mats.data @ vecs.data[:, :, None])[:, :, 0], (mats, vecs))
    if out.requires_grad:
        def backward():
            if mats.requires_grad:
                mats._accumulate(out.grad[:, :, None] * vecs.data[:, None, :])
            if vecs.requires_grad:
                vecs._accumulate((mats.data * out.grad[:, :, None]).sum(axis=1))
        out._backward = backward
    return out


def edge_matvec_t(mats: Tensor, vecs: Tensor) -> Tensor:
    """Per-edge transposed product: (E, m, d) x (E, m) -> (E, d)."""
    mats, vecs = lift(mats), lift(vecs)
    if mats.data.ndim != 3 or vecs.data.ndim != 2 or (
            mats.data.shape[0], mats.data.shape[1]) != vecs.data.shape:
        raise ShapeMismatchError(
            f"edge_matvec_t: got {mats.data.shape} and {vecs.data.shape}")
    out = _make((vecs.data[:, None, :] @ mats.data)[:, 0, :], (mats, vecs))
    if out.requires_grad:
        def backward():
            if mats.requires_grad:
                mats._accumulate(vecs.data[:, :, None] * out.grad[:, None, :])
            if vecs.requires_grad:
                vecs._accumulate((mats.data @ out.grad[:, :, None])[:, :, 0])
        out._backward = backward
    return out
