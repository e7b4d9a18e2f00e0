"""Differentiable operations: convolutions, normalization, activations,
pooling, dense layers and the training losses.

Layout conventions: images are NCHW, conv weights are (out, in, kh, kw),
transposed-conv weights are (in, out, kh, kw), dense weights are (in, out).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, accumulate_grad, record_op

__all__ = [
    "conv2d",
    "deconv2d",
    "batchnorm2d",
    "leaky_relu",
    "relu",
    "prelu",
    "tanh",
    "sigmoid",
    "maxpool2x2",
    "dense",
    "concat_channels",
    "flatten",
    "global_avg_pool",
    "l1_loss",
    "bce_with_logits",
    "softmax_ce",
    "center_loss",
]


def _conv_geometry(h, w, kh, kw, stride, pad):
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    return ho, wo


def _im2col(x, kh, kw, stride, pad):
    """(N,C,H,W) -> (N, C*kh*kw, Ho*Wo) patch matrix."""
    n, c, h, w = x.shape
    ho, wo = _conv_geometry(h, w, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * kh * kw, ho * wo), ho, wo


def _col2im(cols, x_shape, kh, kw, stride, pad):
    """Scatter-add inverse of _im2col."""
    n, c, h, w = x_shape
    ho, wo = _conv_geometry(h, w, kh, kw, stride, pad)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    if pad:
        return xp[:, :, pad : pad + h, pad : pad + w]
    return xp


def conv2d(x, weight, bias, stride=1, padding=0, name="conv2d"):
    """2-d convolution. x (N,C,H,W), weight (O,C,kh,kw), bias (O,)."""
    if x.ndim != 4:
        raise ValueError(f"{name}: expected NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if c != cw:
        raise ValueError(f"{name}: input has {c} channels but weight expects {cw}")
    if bias.shape != (o,):
        raise ValueError(f"{name}: bias shape {bias.shape} does not match {o} filters")
    if stride not in (1, 2):
        raise ValueError(f"{name}: stride must be 1 or 2, got {stride}")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    w2 = weight.data.reshape(o, -1)
    out = np.matmul(w2, cols)
    out += bias.data.reshape(1, o, 1)
    out = out.reshape(n, o, ho, wo)

    def backward(g):
        g2 = np.ascontiguousarray(g).reshape(n, o, ho * wo)
        if bias.requires_grad:
            accumulate_grad(bias, g2.sum(axis=(0, 2)))
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            accumulate_grad(weight, gw.reshape(weight.shape))
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2)
            accumulate_grad(x, _col2im(gcols, x.data.shape, kh, kw, stride, padding))

    return record_op(name, out, (x, weight, bias), backward)


def deconv2d(x, weight, bias, stride=2, padding=2, name="deconv2d"):
    """Transposed convolution that exactly multiplies spatial extent by
    ``stride``. x (N,Ci,h,w), weight (Ci,Co,kh,kw), bias (Co,)."""
    if x.ndim != 4:
        raise ValueError(f"{name}: expected NCHW input, got shape {x.shape}")
    n, ci, h, w = x.shape
    cw, co, kh, kw = weight.shape
    if ci != cw:
        raise ValueError(f"{name}: input has {ci} channels but weight expects {cw}")
    if bias.shape != (co,):
        raise ValueError(f"{name}: bias shape {bias.shape} does not match {co} filters")
    ho, wo = stride * h, stride * w
    # The forward map is the adjoint of a conv from the (ho,wo) grid back to
    # (h,w); that conv's geometry must land exactly on the input extent.
    if _conv_geometry(ho, wo, kh, kw, stride, padding) != (h, w):
        raise ValueError(
            f"{name}: kernel {kh}x{kw} stride {stride} pad {padding} cannot "
            f"double {h}x{w} exactly"
        )
    w2 = weight.data.reshape(ci, co * kh * kw)
    x2 = x.data.reshape(n, ci, h * w)
    gcols = np.matmul(w2.T, x2)
    out = _col2im(gcols, (n, co, ho, wo), kh, kw, stride, padding)
    out += bias.data.reshape(1, co, 1, 1)

    def backward(g):
        cols_g, _, _ = _im2col(g, kh, kw, stride, padding)
        if bias.requires_grad:
            accumulate_grad(bias, g.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            gw = np.matmul(x2, cols_g.transpose(0, 2, 1)).sum(axis=0)
            accumulate_grad(weight, gw.reshape(weight.shape))
        if x.requires_grad:
            gx = np.matmul(w2, cols_g)
            accumulate_grad(x, gx.reshape(x.data.shape))

    return record_op(name, out, (x, weight, bias), backward)


def batchnorm2d(
    x,
    gamma,
    beta,
    running_mean,
    running_var,
    training,
    momentum=0.9,
    eps=1e-5,
    name="batchnorm2d",
):
    """Per-channel batch normalization over (N,H,W).

    ``running_mean``/``running_var`` are plain arrays updated in place in
    training mode: running <- momentum * running + (1 - momentum) * batch.
    Batch variance is the biased estimate, in both the normalization and the
    running statistic.
    """
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"{name}: gamma/beta must have shape ({c},)")
    if training:
        if n < 2:
            raise ValueError(f"{name}: training mode requires batch size >= 2, got {n}")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        accumulate_grad(beta, g.sum(axis=(0, 2, 3)))
        accumulate_grad(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        scale = (gamma.data * inv).reshape(1, c, 1, 1)
        if training:
            m = n * h * w
            gsum = g.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            gxhat = (g * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            gx = scale * (g - gsum / m - xhat * gxhat / m)
        else:
            gx = scale * g
        accumulate_grad(x, gx)

    return record_op(name, out, (x, gamma, beta), backward)


def leaky_relu(x, slope=0.2):
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * x.data.dtype.type(slope))

    def backward(g):
        accumulate_grad(x, np.where(pos, g, g * x.data.dtype.type(slope)))

    return record_op("leaky_relu", out, (x,), backward)


def relu(x):
    pos = x.data > 0
    out = np.where(pos, x.data, x.data.dtype.type(0))

    def backward(g):
        accumulate_grad(x, np.where(pos, g, x.data.dtype.type(0)))

    return record_op("relu", out, (x,), backward)


def prelu(x, slopes):
    """Parametric ReLU with one learned slope per channel (NCHW input)."""
    n, c, h, w = x.shape
    if slopes.shape != (c,):
        raise ValueError(f"prelu: slopes must have shape ({c},), got {slopes.shape}")
    a = slopes.data.reshape(1, c, 1, 1)
    pos = x.data > 0
    out = np.where(pos, x.data, a * x.data)

    def backward(g):
        accumulate_grad(slopes, np.where(pos, 0.0, g * x.data).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            accumulate_grad(x, np.where(pos, g, a * g))

    return record_op("prelu", out, (x, slopes), backward)


def tanh(x):
    out = np.tanh(x.data)

    def backward(g):
        accumulate_grad(x, g * (1.0 - out * out))

    return record_op("tanh", out, (x,), backward)


def clamp(x, lo, hi):
    """Elementwise clip; gradient passes through the interior, zero at the
    saturated ends."""
    inside = (x.data > lo) & (x.data < hi)
    out = np.clip(x.data, x.data.dtype.type(lo), x.data.dtype.type(hi))

    def backward(g):
        accumulate_grad(x, np.where(inside, g, x.data.dtype.type(0)))

    return record_op("clamp", out, (x,), backward)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    out = _sigmoid(x.data)

    def backward(g):
        accumulate_grad(x, g * out * (1.0 - out))

    return record_op("sigmoid", out, (x,), backward)


def maxpool2x2(x):
    """2x2 max pooling, stride 2. Ties resolve to the first window element
    in row-major order, so the gradient routing is deterministic."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2: spatial extent must be even, got {h}x{w}")
    ho, wo = h // 2, w // 2
    windows = (
        x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    )
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        buf = np.zeros_like(windows)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        gx = buf.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        accumulate_grad(x, gx)

    return record_op("maxpool2x2", out, (x,), backward)


def dense(x, weight, bias, name="dense"):
    """Affine layer: x (N,D) @ weight (D,M) + bias (M,).

    The forward pass multiplies one row at a time (broadcast matmul), so a
    sample's output never depends on its batch neighbors; plain (N,D)@(D,M)
    dispatches to different BLAS kernels per batch size and is not
    bit-stable across batch compositions.
    """
    if x.ndim != 2:
        raise ValueError(f"{name}: expected 2-d input, got shape {x.shape}")
    d, m = weight.shape
    if x.shape[1] != d:
        raise ValueError(f"{name}: input width {x.shape[1]} does not match weight {weight.shape}")
    if bias.shape != (m,):
        raise ValueError(f"{name}: bias shape {bias.shape} does not match width {m}")
    out = np.matmul(x.data[:, None, :], weight.data)[:, 0, :] + bias.data

    def backward(g):
        accumulate_grad(bias, g.sum(axis=0))
        if weight.requires_grad:
            accumulate_grad(weight, x.data.T @ g)
        if x.requires_grad:
            accumulate_grad(x, g @ weight.data.T)

    return record_op(name, out, (x, weight, bias), backward)


def concat_channels(a, b):
    """Concatenate two NCHW tensors along the channel axis."""
    if a.ndim != 4 or b.ndim != 4:
        raise ValueError("concat_channels: expected NCHW inputs")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat_channels: incompatible shapes {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        accumulate_grad(a, g[:, :ca])
        accumulate_grad(b, g[:, ca:])

    return record_op("concat_channels", out, (a, b), backward)


def flatten(x):
    """Collapse all but the leading batch axis."""
    n = x.shape[0]
    out = x.data.reshape(n, -1)

    def backward(g):
        accumulate_grad(x, g.reshape(x.data.shape))

    return record_op("flatten", out, (x,), backward)


def global_avg_pool(x):
    """NCHW -> (N,C) mean over the spatial axes."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        gx = np.broadcast_to((g / (h * w))[:, :, None, None], x.data.shape)
        accumulate_grad(x, np.ascontiguousarray(gx))

    return record_op("global_avg_pool", out, (x,), backward)


def _as_target_array(target, like, op):
    data = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=like.dtype)
    if data.shape != like.shape:
        raise ValueError(f"{op}: target shape {data.shape} does not match {like.shape}")
    return data


def l1_loss(pred, target):
    """Mean absolute difference over all elements."""
    tdata = _as_target_array(target, pred.data, "l1_loss")
    diff = pred.data - tdata
    out = np.abs(diff).mean(dtype=pred.dtype)
    parents = (pred, target) if isinstance(target, Tensor) else (pred,)

    def backward(g):
        gd = g * np.sign(diff) / diff.size
        accumulate_grad(pred, gd)
        if isinstance(target, Tensor):
            accumulate_grad(target, -gd)

    return record_op("l1_loss", np.asarray(out), parents, backward)


def bce_with_logits(logits, targets):
    """Binary cross-entropy on logits, averaged over all elements.

    Stabilized as max(z,0) - z*y + log(1 + exp(-|z|)) so large logits cannot
    overflow.
    """
    y = _as_target_array(targets, logits.data, "bce_with_logits")
    z = logits.data
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = loss.mean(dtype=logits.dtype)

    def backward(g):
        accumulate_grad(logits, g * (_sigmoid(z) - y) / z.size)

    return record_op("bce_with_logits", np.asarray(out), (logits,), backward)


def softmax_ce(logits, labels):
    """Mean cross-entropy of (N,K) logits against integer class labels."""
    if logits.ndim != 2:
        raise ValueError(f"softmax_ce: expected (N,K) logits, got shape {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"softmax_ce: labels must have shape ({n},), got {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"softmax_ce: labels must lie in [0, {k})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    lse = np.log(ez.sum(axis=1)) + zmax[:, 0]
    out = (lse - z[np.arange(n), labels]).mean(dtype=logits.dtype)

    def backward(g):
        p = ez / ez.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        accumulate_grad(logits, g * p / n)

    return record_op("softmax_ce", np.asarray(out), (logits,), backward)


def center_loss(features, labels, centers, gamma):
    """(gamma/2) * sum_i ||f_i - c_{label_i}||^2.

    ``centers`` is a plain (K,D) array; it is treated as a constant here and
    updated separately by its own moving-average rule.
    """
    if features.ndim != 2:
        raise ValueError(f"center_loss: expected (N,D) features, got {features.shape}")
    centers = np.asarray(centers, dtype=features.dtype)
    if centers.ndim != 2 or centers.shape[1] != features.shape[1]:
        raise ValueError(
            f"center_loss: centers shape {centers.shape} does not match features {features.shape}"
        )
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= centers.shape[0]:
        raise ValueError(f"center_loss: label without a center (have {centers.shape[0]} centers)")
    diff = features.data - centers[labels]
    out = 0.5 * gamma * np.sum(diff * diff, dtype=features.dtype)

    def backward(g):
        accumulate_grad(features, g * gamma * diff)

    return record_op("center_loss", np.asarray(out), (features,), backward)
