"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Each op builds its output eagerly and, when any input requires a gradient,
records a closure mapping the output gradient to input gradients.
``Tensor.backward`` walks the graph in reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Sequence

import numpy as np

from . import kernels

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (inference on a frozen snapshot)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
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
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    @property
    def T(self):
        return transpose(self)


def _toposort(root: Tensor) -> list:
    order, seen, stack = [], set(), [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: tuple, backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    out.op = op
    if req:
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)), "div")


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (0.5 * g / out,), "sqrt")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


# activations

def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    return _make(out, (x,), lambda g: (g * (out > 0),), "relu")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.logaddexp(0.0, x.data), (x,), lambda g: (g * _sigmoid(x.data),), "softplus")


# reductions and normalizers

def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward, "mean")


def amax(x, axis=-1) -> Tensor:
    """Max along one axis; the gradient goes to the first maximizer."""
    x = as_tensor(x)
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, (x,), backward, "amax")


def log_sum_exp(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)
    p = e / s
    return _make(out, (x,), lambda g: (np.expand_dims(g, axis) * p,), "log_sum_exp")


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data - np.max(x.data, axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def log_softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


# shape manipulation

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x, index) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(x.data[index], (x,), backward, "getitem")


def concat(xs: Sequence, axis=-1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]}") from None
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _make(out, tuple(xs), lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def stack(xs: Sequence, axis=0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.stack([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[x.shape for x in xs]}") from None
    n = len(xs)
    return _make(out, tuple(xs),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


# linear algebra

def matmul(a, b) -> Tensor:
    """``a @ b`` for a of shape (..., n, k) and b of shape (k, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        gx = g @ weight.data
        gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _make(out, parents, backward, "linear")


def cosine_similarity(a, b) -> Tensor:
    """Pairwise cosine similarity between rows of a (n, D) and b (m, D).

    1-D inputs are treated as single rows and give a scalar. A pair involving
    a zero-norm vector has similarity 0 and contributes no gradient.
    """
    a, b = as_tensor(a), as_tensor(b)
    vec = a.ndim == 1 and b.ndim == 1
    A = a.data.reshape(1, -1) if a.ndim == 1 else a.data
    B = b.data.reshape(1, -1) if b.ndim == 1 else b.data
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeError(f"cosine_similarity: incompatible shapes {a.shape} and {b.shape}")
    na = np.sqrt((A * A).sum(axis=1))
    nb = np.sqrt((B * B).sum(axis=1))
    inv_a = np.divide(1.0, na, out=np.zeros_like(na), where=na > 0)
    inv_b = np.divide(1.0, nb, out=np.zeros_like(nb), where=nb > 0)
    scale = inv_a[:, None] * inv_b[None, :]
    S = (A @ B.T) * scale

    def backward(g):
        g = np.asarray(g).reshape(S.shape)
        G = g * scale
        gS = (g * S)
        ga = G @ B - A * (inv_a ** 2)[:, None] * gS.sum(axis=1)[:, None]
        gb = G.T @ A - B * (inv_b ** 2)[:, None] * gS.sum(axis=0)[:, None]
        return ga.reshape(a.shape), gb.reshape(b.shape)

    out = S[0, 0] if vec else S
    return _make(out, (a, b), backward, "cosine_similarity")


# convolutions

def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """x (B, C, L), weight (O, C, k) -> (B, O, L_out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} does not match weight {weight.shape}")
    nb, nc, _ = x.shape
    no, _, k = weight.shape
    xp = np.ascontiguousarray(np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data)
    lp = xp.shape[2]
    if lp < k:
        raise ShapeError(f"conv1d: padded length {lp} shorter than kernel {k}")
    lout = (lp - k) // stride + 1
    cols = kernels.im2col1d(xp, k, stride, lout)
    w2 = weight.data.reshape(no, nc * k)
    out = (cols @ w2.T).transpose(0, 2, 1)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None]
        parents = (x, weight, bias)

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 1))
        gw = (gt.reshape(-1, no).T @ cols.reshape(-1, nc * k)).reshape(weight.shape)
        gcols = np.ascontiguousarray(gt @ w2)
        gxp = kernels.col2im1d(gcols, nc, lp, k, stride)
        gx = gxp[:, :, padding:lp - padding] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _make(out, parents, backward, "conv1d")


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """x (B, C, H, W), weight (O, C, kh, kw) -> (B, O, H_out, W_out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} does not match weight {weight.shape}")
    nb, nc, _, _ = x.shape
    no, _, kh, kw = weight.shape
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.ascontiguousarray(np.pad(x.data, pad) if padding else x.data)
    hp, wp = xp.shape[2:]
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: padded input {(hp, wp)} smaller than kernel {(kh, kw)}")
    hout = (hp - kh) // stride + 1
    wout = (wp - kw) // stride + 1
    cols = kernels.im2col2d(xp, kh, kw, stride, hout, wout)
    w2 = weight.data.reshape(no, -1)
    out = (cols @ w2.T).transpose(0, 2, 1).reshape(nb, no, hout, wout)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents = (x, weight, bias)

    def backward(g):
        gt = np.ascontiguousarray(g.reshape(nb, no, hout * wout).transpose(0, 2, 1))
        gw = (gt.reshape(-1, no).T @ cols.reshape(-1, cols.shape[2])).reshape(weight.shape)
        gcols = np.ascontiguousarray(gt @ w2)
        gxp = kernels.col2im2d(gcols, nc, hp, wp, kh, kw, stride, hout, wout)
        gx = gxp[:, :, padding:hp - padding, padding:wp - padding] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make(out, parents, backward, "conv2d")


# losses

def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    lp = log_softmax(logits, axis=-1)
    picked = getitem(lp, (np.arange(len(labels)), labels))
    return mul(mean(picked), -1.0)
