"""A small reverse-mode autodiff engine over numpy arrays.

Each op returns a new :class:`Tensor` holding references to its parents and a
closure mapping the output gradient to parent gradients. ``backward`` walks
the graph in reverse topological order. Intermediate gradients live in a
per-call dictionary, so the same forward graph can be backpropagated several
times (one loss at a time); only leaf tensors accumulate into ``.grad``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from proxyvqa.errors import ValidationError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        return self.data.ravel()

    @property
    def is_leaf(self):
        return self._backward is None

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every participating leaf's ``.grad``."""
        if self.is_leaf:
            raise ValidationError("backward() called on a tensor with no recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise ValidationError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)

        order, seen = [], set()
        stack = [(self, False)]
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

        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (), _backward=backward if req else None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim != 2:
        raise ValidationError(f"matmul expects (N,K)|(K,) @ (K,M), got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ValidationError(f"matmul inner dimension mismatch: {a.shape} @ {b.shape}")

    def back(g):
        if a.data.ndim == 1:
            return g @ b.data.T, np.outer(a.data, g)
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), back)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), back)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis)
    n = x.data.size // max(out.size, 1)

    def back(g):
        g = np.asarray(g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / n,)

    return _make(out, (x,), back)


def total(x) -> Tensor:
    x = as_tensor(x)

    def back(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(x.data.sum(), (x,), back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def back(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), back)


def conv2d(x, w, b, stride: int = 2, pad: int = 1) -> Tensor:
    """2-D cross-correlation. x: (N,C,H,W), w: (O,C,k,k), b: (O,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    n, c, h, wd = x.shape
    o, c2, k, k2 = w.shape
    if c != c2 or k != k2:
        raise ValidationError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    wmat = w.data.reshape(o, -1)
    out = (cols @ wmat.T + b.data).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (gm.T @ cols).reshape(w.shape)
        gb = gm.sum(axis=0)
        gx = None
        if x.requires_grad:
            gcols = (gm @ wmat).reshape(n, ho, wo, c, k, k)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + h, pad:pad + wd]
        return gx, gw, gb

    return _make(out, (x, w, b), back)


def smooth_l1(pred, target, beta: float = 1.0) -> Tensor:
    """Elementwise Smooth-L1 of ``pred - target``."""
    if beta <= 0:
        raise ValidationError("beta must be > 0")
    pred, target = as_tensor(pred), as_tensor(target)
    r = pred.data - target.data
    quad = np.abs(r) < beta
    out = np.where(quad, r * r / (2 * beta), np.abs(r) - beta / 2)

    def back(g):
        d = g * np.where(quad, r / beta, np.sign(r))
        return d, -d

    return _make(out, (pred, target), back)


def weighted_sum(terms, weights) -> Tensor:
    """sum_t w_t * terms_t with constant weights (no gradient w.r.t. weights)."""
    terms = [as_tensor(t) for t in terms]
    weights = [float(x) for x in weights]
    if len(terms) != len(weights):
        raise ValidationError(f"{len(terms)} terms but {len(weights)} weights")
    out = sum(wt * t.data for wt, t in zip(weights, terms))

    def back(g):
        return tuple(wt * g for wt in weights)

    return _make(np.asarray(out, dtype=np.float64), tuple(terms), back)
