"""Array-level layers with analytic backward passes.

Every op works on numpy arrays laid out as ``(batch, channels, length)``
(dense ops use ``(batch, features)``) and keeps the dtype of its input, so
the same code runs in float32 for training and float64 for gradient checks.
Forward functions that need state for the backward pass return it as a
second value.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

BN_MOMENTUM = 0.9
BN_EPS = 1e-5

# elements per im2col chunk; bounds the transient memory of a conv call
_COL_BUDGET = 1 << 23


def same_padding(length, kernel_len, stride):
    """Output length and (left, right) zero padding for 'same' convolution."""
    out_len = -(-length // stride)
    total = max((out_len - 1) * stride + kernel_len - length, 0)
    return out_len, total // 2, total - total // 2


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeError(f"expected (N, C, L) or (C, L) input, got shape {x.shape}")
    return x, False


def _chunks(n, per_item):
    step = max(1, _COL_BUDGET // max(per_item, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def conv1d_forward(x, kernel, bias, stride=1):
    """Cross-correlation with zero 'same' padding.

    ``kernel`` has shape ``(C_out, C_in, K)``; the output length is
    ``ceil(L / stride)``.
    """
    x, squeeze = _as_batch(x)
    n, c_in, length = x.shape
    c_out, k_in, klen = kernel.shape
    if k_in != c_in:
        raise ShapeError(f"kernel expects {k_in} input channels, input has {c_in}")
    out_len, pl, pr = same_padding(length, klen, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pl, pr)))
    w2 = kernel.reshape(c_out, c_in * klen).T
    out = np.empty((n, c_out, out_len), dtype=np.result_type(x, kernel))
    for sl in _chunks(n, c_in * klen * out_len):
        cols = sliding_window_view(xp[sl], klen, axis=2)[:, :, ::stride, :]
        cols = cols.transpose(0, 2, 1, 3).reshape(-1, c_in * klen)
        y = cols @ w2
        out[sl] = y.reshape(-1, out_len, c_out).transpose(0, 2, 1)
    out += bias[None, :, None]
    return out[0] if squeeze else out


def _transposed_conv(g, kernel, stride, xp_len):
    """Adjoint of the strided correlation: scatter ``g`` back onto the padded input.

    Split by output phase ``r = j mod stride`` so each phase is a stride-1
    correlation with the taps ``k = r, r + stride, ...`` and runs as a GEMM.
    """
    n, c_out, out_len = g.shape
    c_in = kernel.shape[1]
    out = np.empty((n, c_in, xp_len), dtype=np.result_type(g, kernel))
    for r in range(min(stride, kernel.shape[2])):
        taps = kernel[:, :, r::stride]
        q = taps.shape[2]
        m = len(range(r, xp_len, stride))
        gp = np.pad(g, ((0, 0), (0, 0), (q - 1, max(0, m - out_len))))
        wf = taps[:, :, ::-1].transpose(0, 2, 1).reshape(c_out * q, c_in)
        for sl in _chunks(n, c_out * q * m):
            cols = sliding_window_view(gp[sl], q, axis=2)[:, :, :m, :]
            cols = cols.transpose(0, 2, 1, 3).reshape(-1, c_out * q)
            out[sl, :, r::stride] = (cols @ wf).reshape(-1, m, c_in).transpose(0, 2, 1)
    if stride > kernel.shape[2]:
        for r in range(kernel.shape[2], stride):
            out[:, :, r::stride] = 0
    return out


def conv1d_backward(x, kernel, grad_out, stride=1):
    """Gradients of :func:`conv1d_forward` w.r.t. input, kernel and bias."""
    x, squeeze = _as_batch(x)
    g, _ = _as_batch(grad_out)
    n, c_in, length = x.shape
    c_out, _, klen = kernel.shape
    out_len, pl, pr = same_padding(length, klen, stride)
    if g.shape != (n, c_out, out_len):
        raise ShapeError(f"grad_out shape {g.shape} != expected {(n, c_out, out_len)}")
    xp = np.pad(x, ((0, 0), (0, 0), (pl, pr)))
    grad_w = np.zeros((c_in * klen, c_out), dtype=np.result_type(x, kernel))
    for sl in _chunks(n, c_in * klen * out_len):
        cols = sliding_window_view(xp[sl], klen, axis=2)[:, :, ::stride, :]
        cols = cols.transpose(0, 2, 1, 3).reshape(-1, c_in * klen)
        grad_w += cols.T @ g[sl].transpose(0, 2, 1).reshape(-1, c_out)
    grad_x = _transposed_conv(g, kernel, stride, xp.shape[2])[:, :, pl:pl + length]
    grad_b = g.sum(axis=(0, 2))
    grad_w = grad_w.T.reshape(kernel.shape)
    return (grad_x[0] if squeeze else grad_x), grad_w, grad_b


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode="train",
                      momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel batch normalization over the (batch, length) axes.

    In train mode the running statistics are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    if mode == "train":
        count = x.shape[0] * x.shape[2]
        if count < 2:
            raise ShapeError("train-mode batchnorm needs more than one value per channel")
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * x_hat + beta[None, :, None]
    return out.astype(x.dtype, copy=False), (x_hat, inv_std, gamma, mode)


def batchnorm_backward(grad_out, cache):
    x_hat, inv_std, gamma, mode = cache
    grad_gamma = (grad_out * x_hat).sum(axis=(0, 2))
    grad_beta = grad_out.sum(axis=(0, 2))
    dx_hat = grad_out * gamma[None, :, None]
    if mode == "train":
        count = grad_out.shape[0] * grad_out.shape[2]
        grad_x = (inv_std[None, :, None] / count) * (
            count * dx_hat
            - dx_hat.sum(axis=(0, 2))[None, :, None]
            - x_hat * (dx_hat * x_hat).sum(axis=(0, 2))[None, :, None]
        )
    else:
        grad_x = dx_hat * inv_std[None, :, None]
    return grad_x.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    # derivative at exactly 0 is taken as 0
    return grad_out * (x > 0)


def dropout(x, rate, mode, rng):
    """Inverted dropout. Returns ``(y, mask)``; ``mask`` is None when inactive."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode != "train" or rate == 0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1 - rate)
    return x * mask, mask


def dropout_backward(grad_out, mask):
    return grad_out if mask is None else grad_out * mask


def maxpool1d(x, window, stride):
    """Max pooling with 'same' (-inf) padding; output length ``ceil(L/stride)``.

    Returns ``(y, argmax)`` where ``argmax`` holds input positions; ties
    resolve to the first maximal element.
    """
    x, squeeze = _as_batch(x)
    length = x.shape[2]
    out_len, pl, pr = same_padding(length, window, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pl, pr)), constant_values=-np.inf)
    win = sliding_window_view(xp, window, axis=2)[:, :, ::stride, :]
    local = win.argmax(axis=3)
    y = np.take_along_axis(win, local[..., None], axis=3)[..., 0]
    idx = local + np.arange(out_len)[None, None, :] * stride - pl
    if squeeze:
        return y[0], idx[0]
    return y, idx


def maxpool1d_backward(grad_out, argmax, length):
    g, squeeze = _as_batch(grad_out)
    idx, _ = _as_batch(argmax)
    grad_x = np.zeros(g.shape[:2] + (length,), dtype=g.dtype)
    n, c, _ = g.shape
    ni = np.arange(n)[:, None, None]
    ci = np.arange(c)[None, :, None]
    np.add.at(grad_x, (ni, ci, idx), g)
    return grad_x[0] if squeeze else grad_x


def dense_forward(x, weight, bias):
    """``x @ weight + bias`` with ``weight`` of shape ``(in, out)``."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense expects {weight.shape[0]} features, got {x.shape[-1]}")
    return x @ weight + bias


def dense_backward(x, weight, grad_out):
    return grad_out @ weight.T, x.T @ grad_out, grad_out.sum(axis=0)


def sigmoid(x):
    """Logistic function, evaluated without overflow for large |x|."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_loss(logits, targets):
    """Mean sigmoid cross-entropy over every entry, and its gradient.

    Uses ``log(1 + exp(-|z|)) + max(z, 0) - z*y`` so saturated logits
    neither overflow nor lose the loss.
    """
    z = np.asarray(logits)
    y = np.asarray(targets, dtype=z.dtype)
    if z.shape != y.shape:
        raise ShapeError(f"logits {z.shape} and targets {y.shape} differ")
    per = np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0) - z * y
    loss = float(per.mean())
    grad = (sigmoid(z) - y) / z.size
    return loss, grad.astype(z.dtype, copy=False)


def he_normal(rng, shape, fan_in, dtype=np.float32):
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)
