"""Minimal reverse-mode automatic differentiation over numpy arrays.

The models in this package are tiny (dense layers and one LSTM cell of
hidden size 8), so a small tape-based engine is enough and keeps the
whole training path in pure numpy.  All math helpers in this module
(`tanh`, `sigmoid`, ...) accept either a plain ndarray or a `Tensor`,
which lets the network forward passes be written once and reused both
for inference (plain arrays, no tape) and for training (tensors).
"""

import numpy as np


class Tensor:
    """A node in the computation graph wrapping an ndarray value."""

    __slots__ = ("value", "grad", "_parents", "_backward", "requires_grad")

    # Make `ndarray <op> Tensor` defer to our reflected operators instead
    # of numpy trying to broadcast over the Tensor object.
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward=None, requires_grad=True):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    # --- graph construction -------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)

        def bw(g, out):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))

        return Tensor(self.value + other.value, (self, other), bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other)

        def bw(g, out):
            return (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape))

        return Tensor(self.value - other.value, (self, other), bw)

    def __rsub__(self, other):
        return _wrap(other).__sub__(self)

    def __mul__(self, other):
        other = _wrap(other)

        def bw(g, out):
            return (
                _unbroadcast(g * other.value, self.shape),
                _unbroadcast(g * self.value, other.shape),
            )

        return Tensor(self.value * other.value, (self, other), bw)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __matmul__(self, other):
        other = _wrap(other)

        def bw(g, out):
            a, b = self.value, other.value
            if a.ndim == 1 and b.ndim == 2:   # (k,) @ (k, n) -> (n,)
                return (g @ b.T, np.outer(a, g))
            if a.ndim == 2 and b.ndim == 1:   # (m, k) @ (k,) -> (m,)
                return (np.outer(g, b), a.T @ g)
            return (g @ b.T, a.T @ g)

        return Tensor(self.value @ other.value, (self, other), bw)

    def __rmatmul__(self, other):
        return _wrap(other).__matmul__(self)

    # --- backprop -----------------------------------------------------------

    def backward(self, seed=None):
        """Accumulate gradients of this (scalar) node into the graph."""
        if seed is None:
            if self.value.size != 1:
                raise ValueError("backward() without seed requires a scalar")
            seed = np.ones_like(self.value)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in topo:
            node.grad = np.zeros_like(node.value)
        self.grad = np.asarray(seed, dtype=np.float64).reshape(self.value.shape)
        for node in reversed(topo):
            if node._backward is None:
                continue
            grads = node._backward(node.grad, node)
            for parent, g in zip(node._parents, grads):
                if g is not None:
                    parent.grad = parent.grad + g


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=False)


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# --- dual-mode math helpers -------------------------------------------------


def tanh(x):
    if isinstance(x, Tensor):
        y = np.tanh(x.value)
        return Tensor(y, (x,), lambda g, out: (g * (1.0 - out.value**2),))
    return np.tanh(x)


def sigmoid(x):
    if isinstance(x, Tensor):
        y = 1.0 / (1.0 + np.exp(-x.value))
        return Tensor(y, (x,), lambda g, out: (g * out.value * (1.0 - out.value),))
    return 1.0 / (1.0 + np.exp(-x))


def exp(x):
    if isinstance(x, Tensor):
        y = np.exp(x.value)
        return Tensor(y, (x,), lambda g, out: (g * out.value,))
    return np.exp(x)


def log(x):
    if isinstance(x, Tensor):
        return Tensor(np.log(x.value), (x,), lambda g, out: (g / x.value,))
    return np.log(x)


def square(x):
    if isinstance(x, Tensor):
        return x * x
    return np.square(x)


def concat(parts, axis=-1):
    if any(isinstance(p, Tensor) for p in parts):
        parts = [_wrap(p) for p in parts]
        sizes = [p.value.shape[axis] for p in parts]

        def bw(g, out):
            return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

        return Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), bw)
    return np.concatenate(parts, axis=axis)


def slice_last(x, start, stop):
    """Slice along the last axis."""
    if isinstance(x, Tensor):
        def bw(g, out):
            full = np.zeros_like(x.value)
            full[..., start:stop] = g
            return (full,)

        return Tensor(x.value[..., start:stop], (x,), bw)
    return x[..., start:stop]


def sumall(x):
    if isinstance(x, Tensor):
        return Tensor(np.sum(x.value), (x,), lambda g, out: (np.broadcast_to(g, x.shape).copy(),))
    return np.sum(x)


def sum_last(x):
    """Sum over the last axis."""
    if isinstance(x, Tensor):
        def bw(g, out):
            return (np.broadcast_to(g[..., None], x.shape).copy(),)

        return Tensor(np.sum(x.value, axis=-1), (x,), bw)
    return np.sum(x, axis=-1)


def meanall(x):
    if isinstance(x, Tensor):
        n = x.value.size
        return Tensor(np.mean(x.value), (x,), lambda g, out: (np.broadcast_to(g / n, x.shape).copy(),))
    return np.mean(x)


def value_of(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x)
