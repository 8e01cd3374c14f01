"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` records the op that produced it and a closure mapping the
upstream gradient to one gradient per parent. :func:`backward` walks the
tape once in reverse topological order; a tape cannot be replayed.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import DomainError, GraphError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp", "_consumed")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = None
        self._parents = ()
        self._vjp = None
        self._consumed = False

    @classmethod
    def _result(cls, data, parents, vjp, op):
        out = cls.__new__(cls)
        data = np.asarray(data, dtype=np.float64)
        data.setflags(write=False)
        out.data = data
        out.grad = None
        out._consumed = False
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out.op = op
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out.op = None
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag})"

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
        return mul(self, 1.0 / _const(other).data)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def _const(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (the inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise GraphError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = _const(a), _const(b)
    _broadcast_shape(a, b, "add")
    return Tensor._result(
        a.data + b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = _const(a), _const(b)
    _broadcast_shape(a, b, "sub")
    return Tensor._result(
        a.data - b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = _const(a), _const(b)
    _broadcast_shape(a, b, "mul")
    return Tensor._result(
        a.data * b.data, (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)), "mul")


def scale(a, c: float):
    """Multiply by a Python scalar."""
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a):
    return Tensor._result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def relu(a):
    mask = a.data > 0
    return Tensor._result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a):
    y = np.tanh(a.data)
    return Tensor._result(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(a):
    y = np.exp(a.data)
    return Tensor._result(y, (a,), lambda g: (g * y,), "exp")


def log(a):
    if not (a.data > 0).all():
        raise DomainError("log of non-positive input")
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def broadcast_to(a, shape):
    try:
        y = np.broadcast_to(a.data, shape)
    except ValueError:
        raise GraphError(f"cannot broadcast {a.shape} to {shape}") from None
    return Tensor._result(y, (a,), lambda g: (unbroadcast(g, a.shape),), "broadcast")


# -- reductions --------------------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    y = a.data.sum(axis=axis, keepdims=keepdims)
    return Tensor._result(y, (a,), lambda g: (_expand(g, a.shape, axis, keepdims),), "sum")


def mean(a, axis=None, keepdims=False):
    y = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size // max(y.size, 1)
    return Tensor._result(y, (a,), lambda g: (_expand(g, a.shape, axis, keepdims) / n,), "mean")


def l2sq(a, axis=None):
    """Sum of squares over ``axis`` (all axes by default)."""
    y = np.sum(a.data * a.data, axis=axis)
    return Tensor._result(y, (a,), lambda g: (2.0 * a.data * _expand(g, a.shape, axis, False),),
                          "l2sq")


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (a,), vjp, "softmax")


def log_softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def vjp(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(y, (a,), vjp, "log_softmax")


# -- linear algebra / structure -----------------------------------------------

def matmul(a, b):
    a, b = _const(a), _const(b)
    if a.ndim < 2 or b.ndim < 2:
        raise GraphError("matmul needs operands of rank >= 2")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError:
        raise GraphError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._result(y, (a, b), vjp, "matmul")


def conv1d(x, w, b=None, pad=None):
    """Temporal convolution of ``x`` (B, T, Cin) with ``w`` (K*Cin, Cout), tap-major rows.

    ``pad`` defaults to (K-1)//2, which keeps T for odd K.
    """
    x, w = _const(x), _const(w)
    if x.ndim != 3 or w.ndim != 2:
        raise GraphError("conv1d expects x of shape (B, T, C) and w of shape (K*C, Cout)")
    bsz, t, c = x.shape
    if w.shape[0] % c:
        raise GraphError(f"conv1d: weight rows {w.shape[0]} not a multiple of {c} channels")
    k = w.shape[0] // c
    pad = (k - 1) // 2 if pad is None else pad
    cols = kernels.im2col(x.data, k, pad)
    y = cols @ w.data
    parents = (x, w)
    if b is not None:
        b = _const(b)
        if b.shape != (w.shape[1],):
            raise GraphError("conv1d: bias shape mismatch")
        y = y + b.data
        parents = (x, w, b)
    cout = w.shape[1]

    def vjp(g):
        gx = gw = None
        if x.requires_grad:
            gx = kernels.col2im(g @ w.data.T, t, c, k, pad)
        if w.requires_grad:
            gw = cols.reshape(-1, k * c).T @ g.reshape(-1, cout)
        out = (gx, gw)
        if b is not None:
            out = out + (g.sum(axis=(0, 1)),)
        return out

    return Tensor._result(y, parents, vjp, "conv1d")


def reshape(a, shape):
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise GraphError(f"cannot reshape {a.shape} to {shape}") from None
    return Tensor._result(y, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    y = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return Tensor._result(y, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, index):
    y = a.data[index]

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, index, g)
        return (out,)

    return Tensor._result(y, (a,), vjp, "slice")


def concat(tensors, axis=-1):
    tensors = [_const(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise GraphError("concat: incompatible shapes "
                         + ", ".join(str(t.shape) for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(y, tensors, vjp, "concat")


# -- motion-specific ----------------------------------------------------------

def diff(a, n):
    """Order-``n`` forward difference along the time axis of (..., T, D)."""
    if n == 0:
        return a
    if a.ndim < 2 or a.shape[-2] <= n:
        raise GraphError(f"diff of order {n} needs more than {n} frames")
    lead = a.shape[:-2]
    t, d = a.shape[-2:]
    y = kernels.forward_diff(a.data.reshape(-1, t, d), n).reshape(lead + (t - n, d))

    def vjp(g):
        return (kernels.forward_diff_adjoint(g.reshape(-1, t - n, d), n).reshape(a.shape),)

    return Tensor._result(y, (a,), vjp, f"diff{n}")


def bone_lengths(a, child, parent):
    """Bone lengths of (..., 3*J) rows -> (..., len(child))."""
    lead = a.shape[:-1]
    rows = a.data.reshape(-1, a.shape[-1])
    lengths = kernels.bone_lengths(rows, child, parent)

    def vjp(g):
        gx = kernels.bone_lengths_vjp(rows, lengths, g.reshape(lengths.shape), child, parent)
        return (gx.reshape(a.shape),)

    return Tensor._result(lengths.reshape(lead + (len(child),)), (a,), vjp, "bone_lengths")


# -- reverse pass -------------------------------------------------------------

def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Populate ``.grad`` on every node upstream of scalar ``loss`` that requires grad."""
    if loss.data.size != 1 or loss.ndim != 0:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("tape already consumed by a previous backward()")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    for node in order:
        if node.op is not None and node._consumed:
            raise GraphError("tape already consumed by a previous backward()")
    grads = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            g = np.zeros(node.shape)
        node.grad = np.array(g, dtype=np.float64).reshape(node.shape)
        if node.op is None:
            continue
        node._consumed = True
        pgrads = node._vjp(node.grad)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
