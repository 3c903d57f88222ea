"""Neural-network operations on top of the tensor tape.

Each op has a fused backward closure; all of them are exercised against
central finite differences by the gradient-check suite.
"""

from __future__ import annotations

import numpy as np

from geoaware.errors import InputError, ShapeError
from geoaware.numerics.tensor import Tensor, as_tensor, make_result

# -- activations and normalization -------------------------------------------


def relu(a):
    a = as_tensor(a)
    out_vals = np.maximum(a.values, 0.0)

    def build():
        mask = a.values > 0.0

        def backward(g):
            a._accumulate(g * mask)

        return backward

    return make_result(out_vals, (a,), build, "relu")


def softmax(a, axis=-1):
    """Numerically stable softmax along ``axis``; rows sum to 1."""
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out_vals = exp / exp.sum(axis=axis, keepdims=True)

    def build():
        def backward(g):
            inner = (g * out_vals).sum(axis=axis, keepdims=True)
            a._accumulate(out_vals * (g - inner))

        return backward

    return make_result(out_vals, (a,), build, "softmax")


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine params must have shape ({d},)")
    mu = x.values.mean(axis=-1, keepdims=True)
    xc = x.values - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_vals = xhat * gamma.values + beta.values

    def build():
        def backward(g):
            if x.requires_grad or x._backward is not None:
                dxhat = g * gamma.values
                term1 = dxhat.mean(axis=-1, keepdims=True)
                term2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
                x._accumulate(inv * (dxhat - term1 - xhat * term2))
            lead = tuple(range(g.ndim - 1))
            if gamma.requires_grad or gamma._backward is not None:
                gamma._accumulate((g * xhat).sum(axis=lead))
            if beta.requires_grad or beta._backward is not None:
                beta._accumulate(g.sum(axis=lead))

        return backward

    return make_result(out_vals, (x, gamma, beta), build, "layer_norm")


# -- convolutions ------------------------------------------------------------


def _conv1d_cols(x_vals, k, stride, padding):
    """im2col for [B, C, N] input: returns [B, N_out, C * k] patches."""
    b, c, n = x_vals.shape
    n_out = (n + 2 * padding - k) // stride + 1
    if n_out <= 0:
        raise ShapeError(f"conv1d output extent would be {n_out} (N={n}, k={k}, stride={stride}, padding={padding})")
    if padding:
        x_vals = np.pad(x_vals, ((0, 0), (0, 0), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x_vals, k, axis=2)[:, :, ::stride, :]
    return windows.transpose(0, 2, 1, 3).reshape(b, n_out, c * k), n_out


def _conv1d_input_grad(gcols, in_shape, k, stride, padding):
    """Scatter column gradients [B, N_out, C, k] back to the input [B, C, N]."""
    b, c, n = in_shape
    n_out = gcols.shape[1]
    gx = np.zeros((b, c, n + 2 * padding), dtype=gcols.dtype)
    g = gcols.transpose(0, 2, 1, 3)  # [B, C, N_out, k]
    for t in range(k):
        gx[:, :, t : t + stride * n_out : stride] += g[:, :, :, t]
    return gx[:, :, padding : padding + n] if padding else gx


def conv1d(x, kernels, bias, stride=1, padding=0):
    """1-D cross-correlation (no kernel flip).

    ``x`` is [C_in, N] or [B, C_in, N]; ``kernels`` is [C_out, C_in, k];
    ``bias`` is [C_out].  Output length is floor((N + 2p - k) / stride) + 1.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    squeeze = x.ndim == 2
    x_vals = x.values[None] if squeeze else x.values
    if x_vals.ndim != 3:
        raise ShapeError(f"conv1d input must be rank 2 or 3, got {x.shape}")
    if kernels.ndim != 3 or kernels.shape[1] != x_vals.shape[1]:
        raise ShapeError(f"conv1d kernels {kernels.shape} do not match input channels {x_vals.shape[1]}")
    c_out, c_in, k = kernels.shape
    if bias.shape != (c_out,):
        raise ShapeError(f"conv1d bias must have shape ({c_out},)")

    cols, n_out = _conv1d_cols(x_vals, k, stride, padding)
    w2 = kernels.values.reshape(c_out, c_in * k)
    out = cols @ w2.T + bias.values  # [B, N_out, C_out]
    out_vals = out.transpose(0, 2, 1)
    if squeeze:
        out_vals = out_vals[0]

    def build():
        def backward(g):
            gt = (g[None] if squeeze else g).transpose(0, 2, 1)  # [B, N_out, C_out]
            if kernels.requires_grad or kernels._backward is not None:
                gw = np.tensordot(gt, cols, axes=([0, 1], [0, 1]))  # [C_out, C_in*k]
                kernels._accumulate(gw.reshape(c_out, c_in, k))
            if bias.requires_grad or bias._backward is not None:
                bias._accumulate(gt.sum(axis=(0, 1)))
            if x.requires_grad or x._backward is not None:
                gcols = (gt @ w2).reshape(gt.shape[0], n_out, c_in, k)
                gx = _conv1d_input_grad(gcols, x_vals.shape, k, stride, padding)
                x._accumulate(gx[0] if squeeze else gx)

        return backward

    return make_result(out_vals, (x, kernels, bias), build, "conv1d")


def conv2d(x, kernels, bias, stride=1, padding=0):
    """2-D cross-correlation for [B, C_in, H, W] inputs, [C_out, C_in, kh, kw] kernels."""
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4, got {x.shape}")
    c_out, c_in, kh, kw = kernels.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"conv2d kernels {kernels.shape} do not match input channels {x.shape[1]}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias must have shape ({c_out},)")
    b, _, h, w = x.shape
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ShapeError(f"conv2d output extent would be {h_out}x{w_out}")

    xp = np.pad(x.values, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.values
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, h_out * w_out, c_in * kh * kw)
    w2 = kernels.values.reshape(c_out, c_in * kh * kw)
    out = cols @ w2.T + bias.values  # [B, HW_out, C_out]
    out_vals = out.transpose(0, 2, 1).reshape(b, c_out, h_out, w_out)

    def build():
        def backward(g):
            gt = g.reshape(b, c_out, h_out * w_out).transpose(0, 2, 1)  # [B, HW_out, C_out]
            if kernels.requires_grad or kernels._backward is not None:
                gw = np.tensordot(gt, cols, axes=([0, 1], [0, 1]))
                kernels._accumulate(gw.reshape(c_out, c_in, kh, kw))
            if bias.requires_grad or bias._backward is not None:
                bias._accumulate(gt.sum(axis=(0, 1)))
            if x.requires_grad or x._backward is not None:
                gcols = (gt @ w2).reshape(b, h_out, w_out, c_in, kh, kw)
                gx = np.zeros((b, c_in, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
                gc = gcols.transpose(0, 3, 1, 2, 4, 5)  # [B, C_in, H_out, W_out, kh, kw]
                for i in range(kh):
                    for j in range(kw):
                        gx[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += gc[:, :, :, :, i, j]
                if padding:
                    gx = gx[:, :, padding : padding + h, padding : padding + w]
                x._accumulate(gx)

        return backward

    return make_result(out_vals, (x, kernels, bias), build, "conv2d")


# -- pooling -----------------------------------------------------------------


def pool_bins(n, out_len):
    """Bin edges for adaptive pooling: bin i spans [floor(i*N/out), floor((i+1)*N/out))."""
    edges = [(i * n) // out_len for i in range(out_len + 1)]
    spans = list(zip(edges[:-1], edges[1:]))
    if any(hi <= lo for lo, hi in spans):
        raise ShapeError(f"adaptive_avg_pool1d with out_len={out_len} > N={n} produces empty bins")
    return spans


def adaptive_avg_pool1d(x, out_len):
    """Mean-pool the last axis of [C, N] or [B, C, N] into ``out_len`` bins."""
    x = as_tensor(x)
    if out_len < 1:
        raise ShapeError(f"out_len must be >= 1, got {out_len}")
    n = x.shape[-1]
    spans = pool_bins(n, out_len)
    if out_len == 1:
        out_vals = x.values.mean(axis=-1, keepdims=True)
    else:
        out_vals = np.stack([x.values[..., lo:hi].mean(axis=-1) for lo, hi in spans], axis=-1)

    def build():
        def backward(g):
            gx = np.zeros_like(x.values)
            for i, (lo, hi) in enumerate(spans):
                gx[..., lo:hi] += g[..., i : i + 1] / (hi - lo)
            x._accumulate(gx)

        return backward

    return make_result(out_vals, (x,), build, "adaptive_avg_pool1d")


# -- lookup ------------------------------------------------------------------


def embedding_lookup(table, indices):
    """Gather rows of ``table`` [V, D] at integer ``indices``."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    if idx.dtype.kind not in "iu":
        raise InputError(f"embedding indices must be integers, got dtype {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise InputError(f"embedding index out of range for table with {table.shape[0]} rows")
    out_vals = table.values[idx]

    def build():
        def backward(g):
            gt = np.zeros_like(table.values)
            np.add.at(gt, idx, g)
            table._accumulate(gt)

        return backward

    return make_result(out_vals, (table,), build, "embedding_lookup")


# -- losses ------------------------------------------------------------------


def mse_loss(pred, target):
    """Mean squared error over all elements; returns a scalar tensor."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes disagree: {pred.shape} vs {target.shape}")
    diff = pred.values - target.values
    n = diff.size
    out_vals = np.array([(diff * diff).sum() / n])

    def build():
        def backward(g):
            scale = 2.0 * float(g.reshape(-1)[0]) / n
            if pred.requires_grad or pred._backward is not None:
                pred._accumulate(scale * diff)
            if target.requires_grad or target._backward is not None:
                target._accumulate(-scale * diff)

        return backward

    return make_result(out_vals, (pred, target), build, "mse_loss")


def cross_entropy(logits, labels):
    """Mean cross entropy for [B, K] logits against integer labels [B]."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [B, K] logits, got {logits.shape}")
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"cross_entropy labels must have shape ({b},), got {labels.shape}")
    if labels.dtype.kind not in "iu":
        raise InputError(f"cross_entropy labels must be integers, got dtype {labels.dtype}")
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"cross_entropy label out of range [0, {k})")

    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(b), labels]
    out_vals = np.array([(lse - picked).mean()])

    def build():
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)

        def backward(g):
            gl = probs.copy()
            gl[np.arange(b), labels] -= 1.0
            logits._accumulate(gl * (float(g.reshape(-1)[0]) / b))

        return backward

    return make_result(out_vals, (logits,), build, "cross_entropy")
