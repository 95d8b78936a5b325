"""A small reverse-mode differentiation tape over numpy arrays.

Each :class:`Tensor` remembers its parents and a closure that pushes its
gradient back to them.  ``backward()`` walks the graph in reverse
topological order.  Only the operations the graph network and the PPO loss
need are provided, but each of them is exact (no approximations).
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_back", "requires_grad")

    def __init__(self, data, parents=(), back=None, requires_grad=False):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self._parents = parents
        self._back = back
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    @property
    def shape(self):
        return self.data.shape

    def _acc(self, g):
        if not self.requires_grad:
            return
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad=None):
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=float)
        for node in reversed(order):
            if node._back is not None and node.grad is not None:
                node._back(node.grad)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = _t(other)

        def back(g):
            self._acc(_unbroadcast(g, self.shape))
            other._acc(_unbroadcast(g, other.shape))

        return _node(self.data + other.data, (self, other), back)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_t(other))

    def __rsub__(self, other):
        return _t(other) + (-self)

    def __mul__(self, other):
        other = _t(other)

        def back(g):
            self._acc(_unbroadcast(g * other.data, self.shape))
            other._acc(_unbroadcast(g * self.data, other.shape))

        return _node(self.data * other.data, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _t(other)
        return self * other.reciprocal()

    def reciprocal(self):
        out = 1.0 / self.data

        def back(g):
            self._acc(-g * out * out)

        return _node(out, (self,), back)

    def __matmul__(self, other):
        other = _t(other)

        def back(g):
            self._acc(g @ other.data.T)
            other._acc(self.data.T @ g)

        return _node(self.data @ other.data, (self, other), back)

    # elementwise ----------------------------------------------------------
    def tanh(self):
        out = np.tanh(self.data)

        def back(g):
            self._acc(g * (1.0 - out * out))

        return _node(out, (self,), back)

    def exp(self):
        out = np.exp(self.data)

        def back(g):
            self._acc(g * out)

        return _node(out, (self,), back)

    def log(self):
        def back(g):
            self._acc(g / self.data)

        return _node(np.log(self.data), (self,), back)

    def square(self):
        def back(g):
            self._acc(2.0 * g * self.data)

        return _node(self.data * self.data, (self,), back)

    def clip(self, lo, hi):
        mask = (self.data >= lo) & (self.data <= hi)

        def back(g):
            self._acc(g * mask)

        return _node(np.clip(self.data, lo, hi), (self,), back)

    # reductions and indexing ----------------------------------------------
    def sum(self):
        def back(g):
            self._acc(np.broadcast_to(g, self.shape).copy())

        return _node(self.data.sum(), (self,), back)

    def mean(self):
        n = max(self.data.size, 1)
        return self.sum() * (1.0 / n)

    def rows(self, index):
        """Gather rows (or elements of a vector) by integer index."""
        index = np.asarray(index, dtype=np.int64)

        def back(g):
            acc = np.zeros_like(self.data)
            np.add.at(acc, index, g)
            self._acc(acc)

        return _node(self.data[index], (self,), back)

    def reshape(self, *shape):
        old = self.shape

        def back(g):
            self._acc(g.reshape(old))

        return _node(self.data.reshape(*shape), (self,), back)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, back) -> Tensor:
    t = Tensor(data, parents)
    if t.requires_grad:
        t._back = back
    else:
        t._parents = ()
    return t


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _t(a), _t(b)
    pick_a = a.data <= b.data

    def back(g):
        a._acc(g * pick_a)
        b._acc(g * ~pick_a)

    return _node(np.where(pick_a, a.data, b.data), (a, b), back)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    parts = [_t(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def back(g):
        for p, piece in zip(parts, np.split(g, sizes, axis=axis)):
            p._acc(piece)

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), back)


def segment_sum(x: Tensor, segment: np.ndarray, n: int) -> Tensor:
    """Sum rows of ``x`` into ``n`` buckets given by ``segment``."""
    segment = np.asarray(segment, dtype=np.int64)
    out = np.zeros((n,) + x.shape[1:])
    np.add.at(out, segment, x.data)

    def back(g):
        x._acc(g[segment])

    return _node(out, (x,), back)


def segment_mean(x: Tensor, segment: np.ndarray, n: int) -> Tensor:
    """Mean of rows per bucket; empty buckets yield zeros."""
    counts = np.bincount(np.asarray(segment, dtype=np.int64), minlength=n).astype(float)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    scale = inv.reshape((n,) + (1,) * (x.data.ndim - 1))
    return segment_sum(x, segment, n) * scale


def segment_log_softmax(x: Tensor, segment: np.ndarray, n: int) -> Tensor:
    """log-softmax of a vector computed independently within each segment."""
    segment = np.asarray(segment, dtype=np.int64)
    mx = np.full(n, -np.inf)
    np.maximum.at(mx, segment, x.data)
    shifted = x.data - mx[segment]
    e = np.exp(shifted)
    z = np.zeros(n)
    np.add.at(z, segment, e)
    out = shifted - np.log(z[segment])
    soft = e / z[segment]

    def back(g):
        gs = np.zeros(n)
        np.add.at(gs, segment, g)
        x._acc(g - soft * gs[segment])

    return _node(out, (x,), back)
