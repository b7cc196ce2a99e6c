"""Dense tensors with reverse-mode automatic differentiation.

numpy-backed and CPU-only. Training code runs in float32; the gradient-check
suite builds float64 graphs through the exact same code paths, because
finite-difference comparisons are meaningless in single precision.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


class no_grad:
    """Context manager that suspends graph recording (inference paths)."""

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
    """A dense array plus the bookkeeping needed for backpropagation.

    ``data`` holds the values (float32 or float64), ``grad`` is allocated
    lazily with the same shape, and ``_parents``/``_backward`` record the
    operation that produced this tensor. Those records form a DAG that
    ``backward`` walks once in reverse topological order, so a tensor feeding
    several consumers accumulates the sum of their gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate ``grad`` on every reachable tensor that requires it.

        The loss must be a scalar (one element); gradients accumulate
        additively across multiple uses of the same tensor.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order = topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        src = self

        def backward(g):
            full = np.zeros_like(src.data)
            if _fancy_key(key):
                np.add.at(full, key, g)
            else:
                full[key] += g
            _accum(src, full)

        return _op(self.data[key], (self,), backward)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self

        def backward(g):
            _accum(src, g.reshape(src.data.shape))

        return _op(self.data.reshape(shape), (self,), backward)

    def sum(self, axis=None, keepdims=False):
        src = self

        def backward(g):
            _accum(src, np.broadcast_to(g.reshape(_kept_shape(src.data, axis)), src.data.shape))

        return _op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else _axis_size(self.data, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def topo_order(root: Tensor) -> list[Tensor]:
    """Ancestors of ``root``, ordered so every node follows all its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


# -- plumbing -----------------------------------------------------------


def _op(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a.data.dtype)
    if isinstance(b, Tensor):
        return _as_tensor(a, b.data.dtype), b
    return _as_tensor(a), _as_tensor(b)


def _unbroadcast(g, shape):
    """Reduce a gradient back down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if squeezed:
        g = g.sum(axis=squeezed, keepdims=True)
    return g


def _fancy_key(key):
    parts = key if isinstance(key, tuple) else (key,)
    return any(isinstance(p, (np.ndarray, list)) for p in parts)


def _kept_shape(arr, axis):
    if axis is None:
        return (1,) * arr.ndim
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % arr.ndim for a in axes)
    return tuple(1 if i in axes else s for i, s in enumerate(arr.shape))


def _axis_size(arr, axis):
    axes = axis if isinstance(axis, tuple) else (axis,)
    n = 1
    for a in axes:
        n *= arr.shape[a % arr.ndim]
    return n


# -- elementwise and linear algebra --------------------------------------


def add(a, b):
    a, b = _pair(a, b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _op(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _pair(a, b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _op(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = _pair(a, b)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _op(a.data * b.data, (a, b), backward)


def matmul(a, b):
    """Matrix product with leading batch dimensions broadcast numpy-style."""
    a, b = _pair(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(
            f"matmul needs rank >= 2 operands, got {a.data.shape} x {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )

    def backward(g):
        _accum(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
        _accum(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

    return _op(a.data @ b.data, (a, b), backward)


def transpose(t: Tensor, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accum(t, np.transpose(g, inverse))

    return _op(np.transpose(t.data, axes), (t,), backward)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        pieces = np.split(g, np.cumsum(sizes[:-1]), axis=axis)
        for t, piece in zip(tensors, pieces):
            _accum(t, piece)

    return _op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def relu(t: Tensor):
    mask = t.data > 0

    def backward(g):
        _accum(t, g * mask)

    return _op(np.maximum(t.data, 0), (t,), backward)


def tanh(t: Tensor):
    y = np.tanh(t.data)

    def backward(g):
        _accum(t, g * (1.0 - y * y))

    return _op(y, (t,), backward)


def sigmoid(t: Tensor):
    x = t.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accum(t, g * y * (1.0 - y))

    return _op(y, (t,), backward)


def softmax(t: Tensor, axis=-1):
    """Stable softmax along ``axis``; slices sum to one.

    -inf entries (masked attention scores) are allowed and produce exact
    zeros, but every slice must keep at least one finite entry.
    """
    m = t.data.max(axis=axis, keepdims=True)
    if not np.isfinite(m).all():
        raise NumericError(
            "softmax needs at least one finite entry per slice and no nan/+inf"
        )
    y = np.exp(t.data - m)
    y /= y.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(t, y * (g - dot))

    return _op(y, (t,), backward)


def log_softmax(t: Tensor, axis=-1):
    m = t.data.max(axis=axis, keepdims=True)
    if not np.isfinite(m).all():
        raise NumericError(
            "log_softmax needs at least one finite entry per slice and no nan/+inf"
        )
    shifted = t.data - m
    logz = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - logz
    probs = np.exp(out)

    def backward(g):
        _accum(t, g - probs * g.sum(axis=axis, keepdims=True))

    return _op(out, (t,), backward)


def masked_fill(t: Tensor, mask, value):
    """Replace entries where ``mask`` is True; no gradient flows to them."""
    mask = np.asarray(mask, dtype=bool)
    if np.broadcast_shapes(t.data.shape, mask.shape) != t.data.shape:
        raise ValueError(
            f"mask shape {mask.shape} does not broadcast onto {t.data.shape}"
        )

    def backward(g):
        _accum(t, np.where(mask, 0.0, g))

    return _op(np.where(mask, t.data.dtype.type(value), t.data), (t,), backward)


def take_rows(table: Tensor, ids):
    """Row gather (embedding lookup); backward scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise ValueError(f"token id out of range [0, {rows}): {ids.min()}..{ids.max()}")

    def backward(g):
        if not table.requires_grad:
            return
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        _accum(table, full)

    return _op(table.data[ids], (table,), backward)


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = t.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        _accum(gain, (g * xhat).sum(axis=lead))
        _accum(bias, g.sum(axis=lead))
        gx = g * gain.data
        _accum(
            t,
            inv
            * (
                gx
                - gx.mean(axis=-1, keepdims=True)
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            ),
        )

    return _op(out, (t, gain, bias), backward)


def cross_entropy_smoothed(logits: Tensor, gold: int, epsilon: float):
    """Label-smoothed cross entropy of a single logit vector.

    The target distribution is uniform smoothing over the full vocabulary,
    gold class included: q = (1 - eps) * onehot(gold) + eps / V.
    """
    if logits.data.ndim != 1:
        raise ValueError(f"expected a logit vector, got shape {logits.data.shape}")
    v = logits.data.shape[0]
    if v < 2:
        raise ValueError(f"vocabulary must have at least 2 entries, got {v}")
    if not 0 <= gold < v:
        raise ValueError(f"gold index {gold} out of range [0, {v})")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {epsilon}")
    q = np.full(v, epsilon / v, dtype=logits.data.dtype)
    q[gold] += 1.0 - epsilon
    return -(mul(log_softmax(logits, axis=-1), q).sum())
