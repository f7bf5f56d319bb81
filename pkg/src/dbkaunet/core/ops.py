"""Differentiable primitives on :class:`Tensor`.

Each primitive computes its forward value with numpy and registers an
analytic backward rule.  Broadcasting follows numpy semantics; gradients
are summed back to the operand shapes.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from .tensor import ShapeError, Tensor, ensure_tensor

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        b = ensure_tensor(b, like=a)
    else:
        b = ensure_tensor(b)
        a = ensure_tensor(a, like=b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"incompatible operand shapes {a.shape} and {b.shape}") from None
    return a, b


# -- elementwise binary -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data + b.data, (a, b),
                           lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data - b.data, (a, b),
                           lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward, "div")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return Tensor._from_op(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def neg(x: Tensor) -> Tensor:
    return Tensor._from_op(-x.data, (x,), lambda g: (-g,), "neg")


def power(x: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    xd = x.data
    return Tensor._from_op(xd ** p, (x,), lambda g: (g * p * xd ** (p - 1.0),), "pow")


# -- elementwise unary ----------------------------------------------------------

def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._from_op(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def abs(x: Tensor) -> Tensor:  # noqa: A001
    xd = x.data
    return Tensor._from_op(np.abs(xd), (x,), lambda g: (g * np.sign(xd),), "abs")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0).astype(x.dtype, copy=False), (x,),
                           lambda g: (g * mask,), "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return Tensor._from_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    xd = x.data
    s = _sigmoid(xd)
    return Tensor._from_op(xd * s, (x,), lambda g: (g * (s * (1.0 + xd * (1.0 - s))),), "silu")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``0.5 x (1 + erf(x / sqrt 2))``."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
    return Tensor._from_op(xd * cdf, (x,), lambda g: (g * (cdf + xd * pdf),), "gelu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is zero where clamping is active."""
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return Tensor._from_op(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,), "clip")


_ELEMENTWISE = {
    "add": add, "mul": mul, "sigmoid": sigmoid, "silu": silu, "gelu": gelu,
    "relu": relu, "abs": abs,
}


def elementwise(op_kind: str, *inputs, factor: float | None = None) -> Tensor:
    """Dispatch one of the named elementwise operations.

    ``scale`` takes a single tensor and the keyword ``factor``.
    """
    if op_kind == "scale":
        if factor is None:
            raise ValueError("scale requires factor=")
        return scale(inputs[0], factor)
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*inputs)


# -- reductions -----------------------------------------------------------------

def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    axes = _norm_axes(axis, x.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return Tensor._from_op(x.data.sum(axis=axes, keepdims=keepdims), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"mean over empty axes {axes} of shape {x.shape}")
    return scale(sum(x, axes, keepdims), 1.0 / count)


# -- shape manipulation ---------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def _is_basic_index(key) -> bool:
    if not isinstance(key, tuple):
        key = (key,)
    return all(k is None or k is Ellipsis or isinstance(k, (int, slice)) for k in key)


def getitem(x: Tensor, key) -> Tensor:
    shape, dtype = x.shape, x.dtype
    basic = _is_basic_index(key)

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        return (full,)

    return Tensor._from_op(x.data[key], (x,), backward, "getitem")


def take(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis with integer indices (repeats allowed)."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return Tensor._from_op(np.take(x.data, indices, axis=axis), (x,), backward, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [ensure_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"cannot concatenate shapes {tensors[0].shape} and {t.shape} on axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis),
                           tuple(tensors), backward, "concat")


def unsqueeze(x: Tensor, axis: int) -> Tensor:
    shape = list(x.shape)
    axis = axis if axis >= 0 else axis + x.ndim + 1
    shape.insert(axis, 1)
    return reshape(x, shape)


# -- linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(ad @ bd, (a, b), backward, "matmul")


def softmax(x: Tensor, dim: int = -1) -> Tensor:
    """Softmax along ``dim`` with max-subtraction for stability."""
    if not -x.ndim <= dim < x.ndim:
        raise IndexError(f"softmax axis {dim} invalid for rank {x.ndim}")
    z = x.data - x.data.max(axis=dim, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=dim, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=dim, keepdims=True)),)

    return Tensor._from_op(y, (x,), backward, "softmax")


softmax_along = softmax


# -- normalization --------------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Batch normalization over all axes except axis 1.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, as is conventional).
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm parameters {gamma.shape}/{beta.shape} do not match {c} channels")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xd = x.data
    if training:
        n = xd.size // c
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        if n > 1:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * (n / (n - 1))
    else:
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(bshape)) * invstd.reshape(bshape)
    gd, bd = gamma.data.reshape(bshape), beta.data.reshape(bshape)
    out = xhat * gd + bd

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            if training:
                n = xd.size // c
                s1 = dxhat.sum(axis=axes, keepdims=True)
                s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                gx = (invstd.reshape(bshape) / n) * (n * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * invstd.reshape(bshape)
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward, "batch_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm parameters {gamma.shape}/{beta.shape} do not match last dim {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * invstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        red = tuple(range(x.ndim - 1))
        ggamma = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gbeta = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = (invstd / d) * (d * dxhat - dxhat.sum(-1, keepdims=True)
                                 - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward, "layer_norm")


# -- pooling and resizing ---------------------------------------------------------

def _bins(n_in: int, n_out: int) -> list[tuple[int, int]]:
    return [((i * n_in) // n_out, -((-(i + 1) * n_in) // n_out)) for i in range(n_out)]


def adaptive_avg_pool2d(x: Tensor, output_size) -> Tensor:
    """Average over adaptive bins of the last two axes."""
    if isinstance(output_size, int):
        output_size = (output_size, output_size)
    oh, ow = output_size
    h, w = x.shape[-2:]
    if h == 0 or w == 0:
        raise ShapeError(f"adaptive pooling of zero spatial extent {x.shape}")
    if (oh, ow) == (1, 1):
        return mean(x, axis=(-2, -1), keepdims=True)
    if h % oh == 0 and w % ow == 0:
        kh, kw = h // oh, w // ow
        lead = x.shape[:-2]
        r = reshape(x, lead + (oh, kh, ow, kw))
        return mean(r, axis=(-3, -1))
    xd = x.data
    rows, cols = _bins(h, oh), _bins(w, ow)
    out = np.empty(x.shape[:-2] + (oh, ow), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[..., i, j] = xd[..., r0:r1, c0:c1].mean(axis=(-2, -1))

    def backward(g):
        full = np.zeros(x.shape, dtype=x.dtype)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                full[..., r0:r1, c0:c1] += g[..., i, j, None, None] / ((r1 - r0) * (c1 - c0))
        return (full,)

    return Tensor._from_op(out, (x,), backward, "adaptive_avg_pool2d")


def adaptive_avg_pool_to_1(x: Tensor) -> Tensor:
    """Per-channel spatial mean of a C x H x W (or batched) map, keeping 1 x 1 dims."""
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected rank 3 or 4 input, got shape {x.shape}")
    return adaptive_avg_pool2d(x, (1, 1))


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    h, w = x.shape[-2:]
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d with kernel {k} needs spatial dims divisible by {k}, got {(h, w)}")
    return adaptive_avg_pool2d(x, (h // k, w // k))


def upsample_nearest(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Nearest-neighbour resize of the last two axes to ``size``."""
    h, w = x.shape[-2:]
    oh, ow = size
    if (oh, ow) == (h, w):
        return x
    if oh % h == 0 and ow % w == 0:
        fh, fw = oh // h, ow // w
        xd = x.data
        lead = x.shape[:-2]
        out = np.broadcast_to(xd[..., :, None, :, None], lead + (h, fh, w, fw)).reshape(lead + (oh, ow))

        def backward(g):
            return (g.reshape(lead + (h, fh, w, fw)).sum(axis=(-3, -1)),)

        return Tensor._from_op(np.ascontiguousarray(out), (x,), backward, "upsample_nearest")
    rows = (np.arange(oh) * h) // oh
    cols = (np.arange(ow) * w) // ow
    return take(take(x, rows, axis=-2), cols, axis=-1)
