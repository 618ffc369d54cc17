"""Differentiable primitives.

Every function takes Tensors (or array-likes, treated as constants) and
returns a Tensor. Backward rules are written by hand against numpy.
"""

from __future__ import annotations

import builtins
import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, get_dtype, primitive

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LN_EPS = 1e-5


def _t(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=get_dtype()))


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return primitive("add", (a, b), a.data + b.data,
                     lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return primitive("sub", (a, b), a.data - b.data,
                     lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def multiply(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return primitive("multiply", (a, b), a.data * b.data,
                     lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def relu(x) -> Tensor:
    x = _t(x)
    mask = x.data > 0
    return primitive("relu", (x,), np.where(mask, x.data, 0.0).astype(x.dtype), lambda g: (g * mask,))


def silu(x) -> Tensor:
    x = _t(x)
    s = _sigmoid(x.data)
    return primitive("silu", (x,), x.data * s, lambda g: (g * (s + x.data * s * (1.0 - s)),))


def softplus(x) -> Tensor:
    """log(1 + e^x) evaluated as max(x, 0) + log1p(exp(-|x|))."""
    x = _t(x)
    out = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    return primitive("softplus", (x,), out, lambda g: (g * _sigmoid(x.data),))


def exp(x) -> Tensor:
    """Elementwise exponential. Overflowing inputs raise FloatingPointError."""
    x = _t(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return primitive("exp", (x,), out, lambda g: (g * out,))


def log(x) -> Tensor:
    x = _t(x)
    if np.any(x.data <= 0):
        raise FloatingPointError("log of non-positive value")
    return primitive("log", (x,), np.log(x.data), lambda g: (g / x.data,))


def reciprocal(x) -> Tensor:
    """1/x. Zero entries raise FloatingPointError rather than returning inf."""
    x = _t(x)
    if np.any(x.data == 0):
        raise FloatingPointError("reciprocal of zero")
    out = 1.0 / x.data
    return primitive("reciprocal", (x,), out, lambda g: (-g * out * out,))


def where(cond, a, b) -> Tensor:
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=bool)
    a, b = _t(a), _t(b)
    out = np.where(cond, a.data, b.data)
    return primitive("where", (a, b), out,
                     lambda g: (unbroadcast(np.where(cond, g, 0.0), a.shape),
                                unbroadcast(np.where(cond, 0.0, g), b.shape)))


# shape ---------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _t(x)
    return primitive("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),))


def flatten(x, start: int = 1) -> Tensor:
    x = _t(x)
    return reshape(x, x.shape[:start] + (-1,))


def transpose(x, axes=None) -> Tensor:
    x = _t(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return primitive("transpose", (x,), np.transpose(x.data, axes), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_t(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return primitive("concat", tuple(tensors), out, lambda g: tuple(np.split(g, cuts, axis=axis)))


def _has_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return builtins.any(isinstance(i, (list, np.ndarray)) for i in items)


def slice(x, index) -> Tensor:
    x = _t(x)
    out = x.data[index]
    advanced = _has_advanced(index)

    def bw(g):
        gx = np.zeros_like(x.data)
        if advanced:
            np.add.at(gx, index, g)
        else:
            gx[index] = g
        return (gx,)

    return primitive("slice", (x,), np.array(out, copy=True), bw)


# reductions ----------------------------------------------------------------

def _expand_like(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims=False) -> Tensor:
    x = _t(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    return primitive("sum", (x,), np.asarray(out),
                     lambda g: (np.array(_expand_like(g, x.shape, axis, keepdims)),))


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = _t(x)
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    n = x.data.size / max(np.asarray(out).size, 1)
    return primitive("mean", (x,), np.asarray(out),
                     lambda g: (np.array(_expand_like(g, x.shape, axis, keepdims)) / n,))


# linear algebra --------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return primitive("matmul", (a, b), out, bw)


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight.T + bias with weight stored as (out, in)."""
    x, weight = _t(x), _t(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight fan-in {weight.shape[1]}")
    out = x.data @ weight.data.T
    inputs = (x, weight)
    if bias is not None:
        bias = _t(bias)
        out = out + bias.data
        inputs = (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.shape[-1])
        gx = g @ weight.data
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return primitive("linear", inputs, out, bw)


def _tuple(v, n):
    return (v,) * n if isinstance(v, int) else tuple(v)


def _convnd(x, weight, bias, stride, padding, nd, op):
    x, weight = _t(x), _t(weight)
    if x.ndim != nd + 2 or weight.ndim != nd + 2:
        raise ValueError(f"{op}: expected input and weight with {nd + 2} dims")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"{op}: input channels {x.shape[1]} != weight channels {weight.shape[1]}")
    stride, padding = _tuple(stride, nd), _tuple(padding, nd)
    k = weight.shape[2:]
    xp = np.pad(x.data, [(0, 0), (0, 0)] + [(p, p) for p in padding])
    sp_axes = tuple(range(2, 2 + nd))
    if builtins.any(xp.shape[2 + i] < k[i] for i in range(nd)):
        raise ValueError(f"{op}: kernel {k} larger than padded input {xp.shape[2:]}")
    win = sliding_window_view(xp, k, axis=sp_axes)
    win = win[(np.s_[:], np.s_[:]) + tuple(np.s_[::s] for s in stride)]
    out_sp = win.shape[2:2 + nd]
    kaxes = tuple(range(2 + nd, 2 + 2 * nd))
    out = np.tensordot(win, weight.data, axes=((1,) + kaxes, (1,) + tuple(range(2, 2 + nd))))
    out = np.moveaxis(out, -1, 1)
    inputs = (x, weight)
    if bias is not None:
        bias = _t(bias)
        out = out + bias.data.reshape((1, -1) + (1,) * nd)
        inputs = (x, weight, bias)

    def bw(g):
        gw = np.tensordot(g, win, axes=((0,) + sp_axes, (0,) + sp_axes))
        gcols = np.tensordot(g, weight.data, axes=((1,), (0,)))  # (B, *out, Cin, *k)
        gxp = np.zeros_like(xp)
        for off in itertools.product(*(range(n) for n in k)):
            dst = (np.s_[:], np.s_[:]) + tuple(
                np.s_[o:o + s * (n - 1) + 1:s] for o, s, n in zip(off, stride, out_sp))
            src = gcols[(np.s_[:],) * (1 + nd) + (np.s_[:],) + off]
            gxp[dst] += np.moveaxis(src, -1, 1)
        crop = (np.s_[:], np.s_[:]) + tuple(np.s_[p:p + n] for p, n in zip(padding, x.shape[2:]))
        gx = gxp[crop]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0,) + sp_axes)

    return primitive(op, inputs, np.ascontiguousarray(out), bw)


def conv2d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """2-D convolution (cross-correlation), NCHW input, (Cout, Cin, kh, kw) weight.

    Output size per axis is floor((in + 2*pad - k) / stride) + 1.
    """
    return _convnd(x, weight, bias, stride, padding, 2, "conv2d")


def conv3d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    return _convnd(x, weight, bias, stride, padding, 3, "conv3d")


# normalization ---------------------------------------------------------------

def batchnorm(x, gamma, beta, running_mean, running_var, training: bool,
              momentum: float = BN_MOMENTUM, eps: float = BN_EPS, tracked=None) -> Tensor:
    """Batch normalization over every axis but the channel axis 1.

    ``running_mean``/``running_var`` are Tensors updated in place in
    training mode (new = momentum * old + (1 - momentum) * batch). Eval
    mode needs ``tracked`` to show at least one recorded batch.
    """
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    g_ = gamma.data.reshape(bshape)
    if training:
        if x.shape[0] < 2:
            raise ValueError("batchnorm in training mode needs a batch of at least 2")
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        m = x.data.size // x.shape[1]
        running_mean.data[...] = momentum * running_mean.data + (1 - momentum) * mu.reshape(-1)
        running_var.data[...] = momentum * running_var.data + (1 - momentum) * var.reshape(-1) * m / (m - 1)
        if tracked is not None:
            tracked.data[...] += 1

        def bw(g):
            gxhat = g * g_
            gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        if tracked is not None and tracked.data.reshape(-1)[0] == 0:
            raise ValueError("batchnorm eval mode requires accumulated running statistics")
        inv = 1.0 / np.sqrt(running_var.data.reshape(bshape) + eps)
        xhat = (x.data - running_mean.data.reshape(bshape)) * inv

        def bw(g):
            return g * g_ * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = xhat * g_ + beta.data.reshape(bshape)
    return primitive("batchnorm", (x, gamma, beta), out, bw)


def layernorm(x, gamma, beta, eps: float = LN_EPS) -> Tensor:
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return primitive("layernorm", (x, gamma, beta), out, bw)


def softmax(x, axis: int = -1) -> Tensor:
    x = _t(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return primitive("softmax", (x,), y,
                     lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def softmax_cross_entropy(logits, targets) -> Tensor:
    """Mean cross-entropy of softmax(logits) against 0-based class ids.

    The logit gradient is (p_hat - onehot) / batch.
    """
    logits = _t(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n, k = logits.shape
    if targets.shape != (n,) or targets.min(initial=0) < 0 or targets.max(initial=0) >= k:
        raise ValueError("targets must be n class ids in [0, K)")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), targets].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), targets] -= 1.0
        return (g * p / n,)

    return primitive("softmax_cross_entropy", (logits,), np.asarray(loss, dtype=logits.dtype), bw)
