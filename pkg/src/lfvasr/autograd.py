"""Reverse-mode automatic differentiation on dense float64 arrays.

A Tensor wraps a numpy array and remembers how it was produced. Calling
``backward()`` on a scalar result walks the recorded graph in reverse
topological order and accumulates ``grad`` arrays on every tensor that
requires them. Only the operations the acoustic-model architecture needs
are provided; heavyweight layers (convolution, LSTM, batch norm, CTC)
register themselves as single fused nodes with hand-written backward
passes.
"""

from contextlib import contextmanager

import numpy as np

from .errors import ShapeError, UsageError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


def _as_array(data):
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """Dense float64 array with an optional gradient tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents) if _grad_enabled else ()
        self._backward = backward if _grad_enabled else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from this scalar through the recorded graph."""
        if self.size != 1:
            raise UsageError("backward() requires a scalar loss")
        if not self.requires_grad:
            raise UsageError("backward() called without a recorded computation")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar (thin wrappers over module-level ops) --

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable tensor with a momentum buffer for Nesterov updates."""

    __slots__ = ("velocity", "name")

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True)
        self.velocity = np.zeros_like(self.data)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _node(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    if not (_grad_enabled and req):
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward=backward)


def add(a, b):
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward)


def sum_(a, axis=None):
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                a.accumulate_grad(np.broadcast_to(g, a.shape).copy())
            else:
                a.accumulate_grad(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _node(a.data.sum(axis=axis), (a,), backward)


def mean(a, axis=None):
    a = _wrap(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / n)


def reshape(a, shape):
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), backward)


def concat(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def relu(a):
    a = _wrap(a)
    out = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0.0))

    return _node(out, (a,), backward)


def tanh(a):
    a = _wrap(a)
    out = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * (1.0 - out * out))

    return _node(out, (a,), backward)


def sigmoid(a):
    a = _wrap(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * out * (1.0 - out))

    return _node(out, (a,), backward)


def exp(a):
    a = _wrap(a)
    out = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * out)

    return _node(out, (a,), backward)


def log(a):
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return _node(np.log(a.data), (a,), backward)


def log_softmax(a):
    """Row-wise log-softmax over the last axis."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g - np.exp(out) * g.sum(axis=-1, keepdims=True))

    return _node(out, (a,), backward)


def pick_rows(a, row_index):
    """Select rows of a 2-D tensor by integer index (with repetition)."""
    a = _wrap(a)
    row_index = np.asarray(row_index, dtype=np.int64)

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, row_index, g)
            a.accumulate_grad(acc)

    return _node(a.data[row_index], (a,), backward)


def pick_cols(a, col_index):
    """Gather one entry per row of a 2-D tensor: out[i] = a[i, col[i]]."""
    a = _wrap(a)
    col_index = np.asarray(col_index, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, (rows, col_index), g)
            a.accumulate_grad(acc)

    return _node(a.data[rows, col_index], (a,), backward)


def take_rows(a, start, stop):
    """Contiguous row slice of the leading axis."""
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            acc[start:stop] = g
            a.accumulate_grad(acc)

    return _node(a.data[start:stop], (a,), backward)


def scatter_rows(a, row_index, n_rows):
    """Place the rows of a 2-D tensor into a zero matrix of n_rows rows.

    Inverse of pick_rows for a unique index; row_index[i] receives row i.
    """
    a = _wrap(a)
    row_index = np.asarray(row_index, dtype=np.int64)
    out = np.zeros((n_rows,) + a.shape[1:], dtype=np.float64)
    out[row_index] = a.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g[row_index])

    return _node(out, (a,), backward)


def broadcast_rows(a, n_rows):
    """Tile a vector [D] into a matrix [n_rows, D]."""
    a = _wrap(a)
    if a.data.ndim != 1:
        raise ShapeError("broadcast_rows expects a vector")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.sum(axis=0))

    return _node(np.broadcast_to(a.data, (n_rows, a.shape[0])).copy(), (a,), backward)


def repeat_last(a, repeats):
    """Repeat each entry of the last axis `repeats` times in place.

    Maps [..., D] to [..., D * repeats]; the inverse (backward) sums each
    group of `repeats` entries.
    """
    a = _wrap(a)
    out = np.repeat(a.data, repeats, axis=-1)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape + (repeats,)).sum(axis=-1))

    return _node(out, (a,), backward)


def fused(data, parents, backward):
    """Register an externally computed result as one graph node.

    `backward(grad_out)` must accumulate gradients on every parent that
    requires them. Used by the convolution, LSTM, batch-norm and CTC
    implementations.
    """
    return _node(data, tuple(parents), backward)
