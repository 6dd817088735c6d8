"""Differentiable operations over ``Tensor``.

Feature maps use a (..., C, H, W) layout; a leading batch axis is optional for
every image op.  Each op's backward returns one adjoint per input.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .. import kernels
from .tensor import DimensionError, Tensor

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(data, op, inputs, backward_fn) -> Tensor:
    return Tensor._from_op(data, op, inputs, backward_fn)


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data
    return _make(out, "add", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data
    return _make(out, "sub", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        "mul",
        (a, b),
        lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        "div",
        (a, b),
        lambda g: (_unbroadcast(g / bd, a.shape), _unbroadcast(-g * out / bd, b.shape)),
    )


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, "sqrt", (x,), lambda g: (g * 0.5 / out,))


def abs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _make(np.abs(x.data), "abs", (x,), lambda g: (g * sign,))


def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(x.dtype)
    return _make(x.data * mask, "relu", (x,), lambda g: (g * mask,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    mask = ((x.data >= lo) & (x.data <= hi)).astype(x.dtype)
    return _make(np.clip(x.data, lo, hi), "clamp", (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated Gaussian error linear unit."""
    xd = x.data
    x2 = xd * xd
    th = np.tanh(_SQRT_2_OVER_PI * xd * (1.0 + 0.044715 * x2))
    out = 0.5 * xd * (1.0 + th)

    def backward(g):
        d_inner = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * d_inner),)

    return _make(out, "gelu", (x,), backward)


# -- reductions and shape ------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), "sum", (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size // max(np.asarray(out).size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(np.asarray(out, dtype=x.dtype), "mean", (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return _make(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(a % x.ndim for a in axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _make(out, "transpose", (x,), lambda g: (g.transpose(inverse),))


def slice_axis(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    axis = axis % x.ndim
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make(x.data[index].copy(), "slice", (x,), backward)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = list(parts)
    if not parts:
        raise DimensionError("concat needs at least one part")
    ndim = parts[0].ndim
    axis = axis % ndim
    for p in parts:
        if p.ndim != ndim or any(p.shape[d] != parts[0].shape[d] for d in range(ndim) if d != axis):
            raise DimensionError(
                f"concat: shapes {[q.shape for q in parts]} disagree off axis {axis}"
            )
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g):
        index = [slice(None)] * ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(lo, hi)
            grads.append(g[tuple(index)])
        return grads

    return _make(out, "concat", parts, backward)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis`` (embedding lookup)."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[axis]):
        raise IndexError(f"take: index out of range for axis of size {x.shape[axis]}")
    out = np.take(x.data, idx, axis=axis)

    def backward(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _make(out, "take", (x,), backward)


# -- linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, "matmul", (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, "softmax", (x,), backward)


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} invalid for rank-{x.ndim} tensor")
    return axis % x.ndim


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-row softmax cross-entropy; ``logits`` is (..., classes)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != logits.shape[:-1]:
        raise DimensionError(f"labels shape {labels.shape} vs logits {logits.shape}")
    n_cls = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise IndexError(f"label out of range for {n_cls} classes")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    onehot = np.zeros_like(logits.data)
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    out = -(logp * onehot).sum(axis=-1)

    def backward(g):
        return (g[..., None] * (np.exp(logp) - onehot),)

    return _make(out, "cross_entropy", (logits,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise each token along ``axis`` then apply the affine ``gain``/``bias``.

    ``gain`` and ``bias`` are 1-D with the normalised extent.
    """
    axis = _check_axis(x, axis)
    c = x.shape[axis]
    if gain.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"layer_norm affine must have shape ({c},), got {gain.shape}/{bias.shape}")
    bshape = [1] * x.ndim
    bshape[axis] = c
    gd = gain.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gd + bias.data.reshape(bshape)
    red = tuple(d for d in range(x.ndim) if d != axis)

    def backward(g):
        g_gain = (g * xhat).sum(axis=red)
        g_bias = g.sum(axis=red)
        gx_hat = g * gd
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=axis, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=axis, keepdims=True)
        )
        return gx, g_gain, g_bias

    return _make(out, "layer_norm", (x, gain, bias), backward)


# -- image ops -----------------------------------------------------------------

def _batched(x: Tensor, rank: int = 4) -> tuple[Tensor, bool]:
    if x.ndim == rank - 1:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != rank:
        raise DimensionError(f"expected a rank {rank - 1} or {rank} tensor, got shape {x.shape}")
    return x, False


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of (N,)C_in×H×W with a C_out×C_in×kh×kw kernel."""
    xb, squeeze = _batched(x)
    if kernel.ndim != 4 or kernel.shape[1] != xb.shape[1]:
        raise DimensionError(f"conv2d kernel {kernel.shape} incompatible with input {x.shape}")
    ho = kernels.conv_out_size(xb.shape[2], kernel.shape[2], stride, pad)
    wo = kernels.conv_out_size(xb.shape[3], kernel.shape[3], stride, pad)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d output extent ({ho}, {wo}) is not positive")
    xd, kd = xb.data, kernel.data
    out = kernels.conv2d_forward(xd, kd, stride, pad)

    def backward(g):
        return kernels.conv2d_backward(xd, kd, g, stride, pad)

    y = _make(out, "conv2d", (xb, kernel), backward)
    return reshape(y, y.shape[1:]) if squeeze else y


def avg_pool2d(x: Tensor, s: int) -> Tensor:
    """Means over non-overlapping s×s windows."""
    h, w = x.shape[-2:]
    if s < 1 or h % s or w % s:
        raise DimensionError(f"pool factor {s} does not divide spatial extent {(h, w)}")
    lead = x.shape[:-2]
    out = x.data.reshape(lead + (h // s, s, w // s, s)).mean(axis=(-3, -1))

    def backward(g):
        g = np.repeat(np.repeat(g, s, axis=-2), s, axis=-1)
        return (g / (s * s),)

    return _make(out, "avg_pool2d", (x,), backward)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour ×2 upsampling of the last two axes."""
    out = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)
    h, w = x.shape[-2:]
    lead = x.shape[:-2]

    def backward(g):
        return (g.reshape(lead + (h, 2, w, 2)).sum(axis=(-3, -1)),)

    return _make(out, "upsample2x", (x,), backward)


def chunk_channels(z: Tensor) -> tuple[Tensor, Tensor]:
    """Split (..., C, H, W) into the first and second channel halves."""
    if z.ndim < 3:
        raise DimensionError(f"chunk_channels needs (..., C, H, W), got {z.shape}")
    c = z.shape[-3]
    if c % 2:
        raise DimensionError(f"chunk_channels needs an even channel count, got {c}")
    return slice_axis(z, 0, c // 2, -3), slice_axis(z, c // 2, c, -3)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if any(p.ndim < 3 for p in parts):
        raise DimensionError("concat_channels needs (..., C, H, W) parts")
    if len({p.shape[-2:] for p in parts}) > 1:
        raise DimensionError(f"concat_channels spatial mismatch: {[p.shape for p in parts]}")
    return concat(parts, axis=-3)


def channel_linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-position linear map over channels: (N, C_in, H, W) -> (N, C_out, H, W)."""
    lead, (c, h, w) = x.shape[:-3], x.shape[-3:]
    if weight.shape[1] != c:
        raise DimensionError(f"channel_linear weight {weight.shape} vs {c} channels")
    y = weight @ reshape(x, lead + (c, h * w))
    if bias is not None:
        y = y + reshape(bias, (weight.shape[0], 1))
    return reshape(y, lead + (weight.shape[0], h, w))
