"""Reverse-mode automatic differentiation over numpy float64 arrays.

A :class:`Tensor` wraps an array and, when any input requires a gradient,
records the vector-Jacobian product of the operation that produced it.
:meth:`Tensor.backward` walks the recorded graph in reverse topological
order. Only the primitives defined in this module carry gradient rules.
"""

from __future__ import annotations

import numpy as np

from hvfae import _kernels

LOG_2PI = float(np.log(2.0 * np.pi))


class DimensionError(ValueError):
    """Raised when operand shapes do not compose."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up where a finite value is required."""


def as_real_array(value, name="array"):
    """Coerce ``value`` to a finite float64 array, rejecting NaN/Inf."""
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
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


def tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents, vjp):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


# elementwise arithmetic

def add(a, b):
    a, b = tensor(a), tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = tensor(a), tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = tensor(a), tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = tensor(a), tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    a = tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    a = tensor(a)
    p = float(exponent)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def square(a):
    a = tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a):
    a = tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def cos(a):
    a = tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def tanh(a):
    a = tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    a = tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def clip(a, lo, hi):
    a = tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a):
    a = tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    a = tensor(a)
    out, sig = _kernels.softplus_sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * sig,))


# linear algebra and shape

def matmul(a, b):
    a, b = tensor(a), tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not compose")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a):
    a = tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, index):
    a = tensor(a)

    fancy = any(isinstance(i, (list, np.ndarray))
                for i in (index if isinstance(index, tuple) else (index,)))

    def vjp(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _make(a.data[index], (a,), vjp)


def concat(tensors, axis=-1):
    tensors = [tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _make(out, tuple(tensors),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _make(out, (a,),
                 lambda g: (np.array(_expand_reduced(g, a.shape, axis, keepdims)),))


def tmean(a, axis=None, keepdims=False):
    a = tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def logsumexp(a, axis=-1, keepdims=False):
    a = tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    se = np.sum(np.exp(a.data - m), axis=axis, keepdims=True)
    out_k = np.log(se) + m
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * np.exp(a.data - out_k),)

    return _make(out, (a,), vjp)


def log_softmax(a, axis=-1):
    a = tensor(a)
    return a - logsumexp(a, axis=axis, keepdims=True)


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis=axis))


# fused kernels backed by the compiled core when available

def pairwise_gauss_logpdf(z, mean, sigma):
    """``out[b, k] = log N(z[b] | mean[k], diag(sigma[k]**2))``."""
    z, mean, sigma = tensor(z), tensor(mean), tensor(sigma)
    if z.ndim != 2 or mean.shape != sigma.shape or mean.shape[1] != z.shape[1]:
        raise DimensionError(
            f"pairwise_gauss_logpdf shapes {z.shape}, {mean.shape}, {sigma.shape}")
    zd, md, sd = (np.ascontiguousarray(t.data) for t in (z, mean, sigma))
    out = _kernels.pairwise_gauss_logpdf(zd, md, sd)
    return _make(out, (z, mean, sigma),
                 lambda g: _kernels.pairwise_gauss_logpdf_grad(
                     zd, md, sd, np.ascontiguousarray(g)))


def rbf_gram(a, b, gamma):
    """``out[i, j] = exp(-||a[i] - b[j]||**2 / gamma)``."""
    a, b = tensor(a), tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"rbf_gram shapes {a.shape} and {b.shape}")
    ad, bd = np.ascontiguousarray(a.data), np.ascontiguousarray(b.data)
    out = _kernels.rbf_gram(ad, bd, float(gamma))
    return _make(out, (a, b),
                 lambda g: _kernels.rbf_gram_grad(ad, bd, float(gamma), out,
                                                  np.ascontiguousarray(g)))
