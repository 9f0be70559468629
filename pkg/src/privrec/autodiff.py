"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations needed by the attention / recall / ranking models are
implemented. Nodes wrap whole arrays, so graph overhead is per-layer, not
per-scalar. Gradients are accumulated with `Node.backward()` on a scalar
output node.
"""

import numpy as np


class Node:
    """A value in the computation graph.

    `parents` is a tuple of parent Nodes and `_vjp` maps the incoming
    gradient to a tuple of gradients, one per parent.
    """

    __slots__ = ("value", "parents", "_vjp", "grad")

    # keep numpy from broadcasting `ndarray <op> Node` elementwise; with this
    # unset, numpy wraps the Node in an object array instead of deferring to
    # the reflected operator
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self._vjp = vjp
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    # -- operator sugar ----------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        """Accumulate gradients of this (scalar) node w.r.t. all ancestors."""
        if self.value.ndim != 0 and self.value.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = _toposort(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in order:
            if node.grad is None or node._vjp is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g


def _toposort(root):
    """Reverse topological order starting at `root`."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def as_node(x):
    """Wrap a value as a constant Node (no-op when already a Node)."""
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# -- elementwise ops -------------------------------------------------------


def add(a, b):
    a, b = as_node(a), as_node(b)
    return Node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_node(a), as_node(b)
    return Node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_node(a), as_node(b)
    return Node(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        ),
    )


def div(a, b):
    a, b = as_node(a), as_node(b)
    return Node(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / (b.value**2), b.shape),
        ),
    )


def tanh(a):
    a = as_node(a)
    out = np.tanh(a.value)
    return Node(out, (a,), lambda g: (g * (1.0 - out**2),))


def exp(a):
    a = as_node(a)
    out = np.exp(a.value)
    return Node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_node(a)
    return Node(np.log(a.value), (a,), lambda g: (g / a.value,))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient is 1 inside the range, 0 outside."""
    a = as_node(a)
    mask = (a.value >= lo) & (a.value <= hi)
    return Node(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,))


# -- reductions and reshaping ----------------------------------------------


def asum(a, axis=None):
    a = as_node(a)
    out = a.value.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Node(out, (a,), vjp)


def mean(a, axis=None):
    a = as_node(a)
    n = a.value.size if axis is None else a.shape[axis]
    return asum(a, axis) / float(n)


def transpose(a):
    a = as_node(a)
    return Node(a.value.T, (a,), lambda g: (np.asarray(g).T,))


def reshape(a, shape):
    a = as_node(a)
    return Node(
        a.value.reshape(shape), (a,), lambda g: (np.asarray(g).reshape(a.shape),)
    )


def concat(nodes, axis=0):
    nodes = [as_node(n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(np.asarray(g), splits, axis=axis))

    return Node(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes), vjp)


def stack(nodes):
    """Stack 1-D nodes into a 2-D matrix, one row each."""
    nodes = [as_node(n) for n in nodes]

    def vjp(g):
        g = np.asarray(g)
        return tuple(g[i] for i in range(len(nodes)))

    return Node(np.stack([n.value for n in nodes]), tuple(nodes), vjp)


def gather_rows(a, idx):
    """Select rows of a 2-D node; gradient scatter-adds into the source."""
    a = as_node(a)
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, idx, np.asarray(g))
        return (out,)

    return Node(a.value[idx], (a,), vjp)


def slice_cols(a, start, stop):
    a = as_node(a)

    def vjp(g):
        out = np.zeros(a.shape)
        out[:, start:stop] = np.asarray(g)
        return (out,)

    return Node(a.value[:, start:stop], (a,), vjp)


# -- matrix products ---------------------------------------------------------


def matmul(a, b):
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    out = av @ bv

    def vjp(g):
        g = np.asarray(g)
        if av.ndim == 2 and bv.ndim == 2:
            return (g @ bv.T, av.T @ g)
        if av.ndim == 2 and bv.ndim == 1:
            return (np.outer(g, bv), av.T @ g)
        if av.ndim == 1 and bv.ndim == 2:
            return (bv @ g, np.outer(av, g))
        if av.ndim == 1 and bv.ndim == 1:
            return (g * bv, g * av)
        raise ValueError("unsupported matmul shapes")

    return Node(out, (a, b), vjp)


def dot(a, b):
    return matmul(a, b)


# -- composite helpers -------------------------------------------------------


def softmax(a):
    """Numerically stable softmax over a 1-D node."""
    a = as_node(a)
    shift = a - float(a.value.max())
    e = exp(shift)
    return e / asum(e)


def softmax_rows(a):
    """Row-wise softmax of a 2-D node."""
    a = as_node(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        g = np.asarray(g)
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return Node(s, (a,), vjp)


def logsumexp(a):
    a = as_node(a)
    m = float(a.value.max())
    return log(asum(exp(a - m))) + m


def value(x):
    """Plain ndarray of a Node or array-like."""
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)
