"""Differentiable operations used by the networks and losses."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateVarianceError, ShapeError
from .tensor import Tensor, as_tensor


def _conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(x, kh, kw, stride):
    n, c, _, _ = x.shape
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return cols, oh, ow


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation over an NCHW batch."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, w_cin, kh, kw = weight.shape
    if c_in != w_cin:
        raise ShapeError(f"conv2d input has {c_in} channels but weight expects {w_cin}")
    if stride < 1:
        raise ShapeError("conv2d stride must be >= 1")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {h}x{w}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d bias shape {bias.shape} != ({c_out},)")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols, oh, ow = _im2col(xp, kh, kw, stride)
    w2 = weight.data.reshape(c_out, -1)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, oh, ow, c_in, kh, kw)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "conv2d")


def linear(x, weight, bias=None):
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} incompatible with weight {weight.shape}")
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "linear")


def batchnorm2d(x, weight, bias, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalisation.

    ``running_mean`` and ``running_var`` are numpy arrays updated in place
    when ``training`` is true (unbiased variance, as in the usual convention).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4 or weight.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm2d: input {x.shape} incompatible with affine {weight.shape}")
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if training:
        if count < 2:
            raise DegenerateVarianceError("batchnorm2d needs at least 2 values per channel in training mode")
        mean = x.data.mean(axis=axes)
        centered = x.data - mean.reshape(shape)
        var = (centered * centered).mean(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (count / (count - 1))
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
        centered = x.data - mean.reshape(shape)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
    xhat = centered * inv_std.reshape(shape)
    out = xhat * weight.data.reshape(shape) + bias.data.reshape(shape)

    def backward(g):
        gw = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gx = None
        if x.requires_grad:
            gxhat = g * weight.data.reshape(shape)
            if training:
                gx = (inv_std.reshape(shape) / count) * (
                    count * gxhat
                    - gxhat.sum(axis=axes).reshape(shape)
                    - xhat * (gxhat * xhat).sum(axis=axes).reshape(shape)
                )
            else:
                gx = gxhat * inv_std.reshape(shape)
        return gx, gw, gb

    return Tensor._from_op(out, (x, weight, bias), backward, "batchnorm2d")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    out = x.data * mask

    def backward(g):
        return (g * mask,)

    return Tensor._from_op(out, (x,), backward, "relu")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return a + b


def concat_channels(tensors):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:1] != ref[:1] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: {t.shape} incompatible with {ref}")
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return Tensor._from_op(out, tuple(tensors), backward, "concat")


def global_avg_pool(x):
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).copy(),)

    return Tensor._from_op(out, (x,), backward, "avgpool")


def softmax_cross_entropy(logits, labels, mask=None):
    """Mean cross-entropy over the batch.

    ``mask`` (boolean, broadcastable to the logits) marks the classes that
    take part in the softmax; excluded logits behave as -inf and receive
    zero gradient.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross-entropy: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ShapeError(f"cross-entropy: label outside [0, {k})")
    z = logits.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask[np.arange(n), labels].all():
            raise ShapeError("cross-entropy: a target class is masked out")
        z = np.where(mask, z, -np.inf)
    shifted = z - z.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    out = np.asarray(-log_probs[np.arange(n), labels].mean(), dtype=logits.dtype)

    def backward(g):
        probs = exp / denom
        probs[np.arange(n), labels] -= 1.0
        return (probs * (g / n),)

    return Tensor._from_op(out, (logits,), backward, "cross_entropy")


def mse(a, b):
    """Mean squared difference over all elements."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    out = np.asarray((diff * diff).mean(), dtype=a.dtype)
    scale = 2.0 / diff.size

    def backward(g):
        ga = g * scale * diff
        return ga, -ga

    return Tensor._from_op(out, (a, b), backward, "mse")
