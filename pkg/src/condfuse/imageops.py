"""Image-shaped primitives: convolution, local statistics, bilinear resize.

All ops accept [C,H,W] or [B,C,H,W] tensors and run as im2col/GEMM so the
toy networks train at a usable speed on CPU.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError
from .tensor import Tensor, _make, as_tensor

# Negative-control hook for gradcheck: maps op name -> factor applied to its
# input gradient. Only ever set by the CLI `gradcheck --corrupt-op` fixture.
BACKWARD_SCALE = {}


def _as_batched(ad):
    if ad.ndim == 3:
        return ad[None], True
    if ad.ndim == 4:
        return ad, False
    raise DimensionError(f"expected [C,H,W] or [B,C,H,W], got shape {ad.shape}")


def conv2d(x, kernel, dilation=1, padding=0, stride=1):
    """Cross-correlate `x` [.., C_in, H, W] with `kernel` [C_out, C_in, k, k]."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    kd = kernel.data
    xd, squeeze = _as_batched(x.data)
    if kd.ndim != 4 or kd.shape[2] != kd.shape[3]:
        raise DimensionError(f"kernel must be [C_out,C_in,k,k], got {kd.shape}")
    co, ci, k, _ = kd.shape
    if k % 2 != 1:
        raise DimensionError(f"kernel size must be odd, got {k}")
    if xd.shape[1] != ci:
        raise DimensionError(f"input has {xd.shape[1]} channels, kernel expects {ci}")
    if dilation < 1 or stride < 1 or padding < 0:
        raise ParameterError("dilation/stride must be >= 1 and padding >= 0")
    b, _, h, w = xd.shape
    span = dilation * (k - 1) + 1
    ho = (h + 2 * padding - span) // stride + 1
    wo = (w + 2 * padding - span) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"output extent would be {ho}x{wo} for input {h}x{w}")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (span, span), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, ::dilation, ::dilation]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, ci * k * k)
    w2 = kd.reshape(co, ci * k * k)
    out = (cols @ w2.T).reshape(b, ho, wo, co).transpose(0, 3, 1, 2)
    if squeeze:
        out = out[0]

    def bw(g):
        gd = g[None] if squeeze else g
        g2 = np.ascontiguousarray(gd.transpose(0, 2, 3, 1)).reshape(b * ho * wo, co)
        gk = (g2.T @ cols).reshape(kd.shape)
        gcols = (g2 @ w2).reshape(b, ho, wo, ci, k, k)
        gxp = np.zeros_like(xp)
        for i in range(k):
            hi = i * dilation
            for j in range(k):
                wj = j * dilation
                gxp[:, :, hi : hi + stride * ho : stride, wj : wj + stride * wo : stride] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, padding : padding + h, padding : padding + w]
        gx = gx * BACKWARD_SCALE.get("conv2d", 1.0)
        if squeeze:
            gx = gx[0]
        return gx, gk

    return _make(out, (x, kernel), bw, "conv2d")


def _box_scatter(g, window, hp, wp):
    """Adjoint of the sliding-window gather: scatter per-window grads back."""
    out = np.zeros(g.shape[:-2] + (hp, wp), dtype=g.dtype)
    h, w = g.shape[-2], g.shape[-1]
    for i in range(window):
        for j in range(window):
            out[..., i : i + h, j : j + w] += g
    return out


def _fold_replicate(acc, pad, h, w):
    """Fold gradients on a replicate-padded grid back onto the source pixels."""
    if pad == 0:
        return acc
    core = acc[..., pad : pad + h, pad : pad + w].copy()
    core[..., 0, :] += acc[..., :pad, pad : pad + w].sum(axis=-2)
    core[..., -1, :] += acc[..., pad + h :, pad : pad + w].sum(axis=-2)
    core[..., :, 0] += acc[..., pad : pad + h, :pad].sum(axis=-1)
    core[..., :, -1] += acc[..., pad : pad + h, pad + w :].sum(axis=-1)
    core[..., 0, 0] += acc[..., :pad, :pad].sum(axis=(-2, -1))
    core[..., 0, -1] += acc[..., :pad, pad + w :].sum(axis=(-2, -1))
    core[..., -1, 0] += acc[..., pad + h :, :pad].sum(axis=(-2, -1))
    core[..., -1, -1] += acc[..., pad + h :, pad + w :].sum(axis=(-2, -1))
    return core


def local_stats(image, window):
    """Sliding-window mean and population variance with edge replication.

    Deviations are taken against the window's center pixel before averaging,
    so constant inputs give bitwise-exact mean == input and variance == 0.
    """
    image = as_tensor(image)
    if window % 2 != 1 or window < 3:
        raise ParameterError(f"window must be odd and >= 3, got {window}")
    xd, squeeze = _as_batched(image.data)
    pad = window // 2
    h, w = xd.shape[-2], xd.shape[-1]
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")
    win = sliding_window_view(xp, (window, window), axis=(2, 3))
    dev = win - xd[..., None, None]
    m = dev.mean(axis=(-2, -1))
    mean = xd + m
    var = np.maximum((dev * dev).mean(axis=(-2, -1)) - m * m, 0.0)
    n = float(window * window)

    def bw_pair(g_mean, g_var):
        acc = _box_scatter(g_mean / n, window, xp.shape[-2], xp.shape[-1])
        if g_var is not None:
            bv = _box_scatter(g_var, window, xp.shape[-2], xp.shape[-1])
            bvm = _box_scatter(g_var * mean, window, xp.shape[-2], xp.shape[-1])
            acc = acc + (2.0 / n) * (xp * bv - bvm)
        gx = _fold_replicate(acc, pad, h, w)
        return gx[0] if squeeze else gx

    def bw_mean(g):
        return (bw_pair(g, None),)

    def bw_var(g):
        return (bw_pair(np.zeros_like(g), g),)

    mean_out = mean[0] if squeeze else mean
    var_out = var[0] if squeeze else var
    return (
        _make(mean_out, (image,), bw_mean, "local_stats.mean"),
        _make(var_out, (image,), bw_var, "local_stats.var"),
    )


_INTERP_CACHE = {}


def _interp_matrix(n_in, scale, dtype):
    key = (n_in, scale, np.dtype(dtype).name)
    mat = _INTERP_CACHE.get(key)
    if mat is None:
        n_out = n_in * scale
        src = (np.arange(n_out, dtype=np.float64) + 0.5) / scale - 0.5
        i0 = np.floor(src).astype(np.int64)
        frac = src - i0
        i0c = np.clip(i0, 0, n_in - 1)
        i1c = np.clip(i0 + 1, 0, n_in - 1)
        mat = np.zeros((n_out, n_in), dtype=dtype)
        rows = np.arange(n_out)
        np.add.at(mat, (rows, i0c), (1.0 - frac).astype(dtype))
        np.add.at(mat, (rows, i1c), frac.astype(dtype))
        _INTERP_CACHE[key] = mat
    return mat


def bilinear_upsample(x, scale):
    """Bilinear x`scale` upsampling with half-pixel (corner-unaligned) centers."""
    x = as_tensor(x)
    if not isinstance(scale, (int, np.integer)) or scale < 1:
        raise ParameterError(f"scale must be a positive int, got {scale}")
    if scale == 1:
        return x
    xd, squeeze = _as_batched(x.data)
    b, c, h, w = xd.shape
    mh = _interp_matrix(h, scale, xd.dtype)
    mw = _interp_matrix(w, scale, xd.dtype)
    flat = xd.reshape(b * c, h, w)
    out = np.matmul(np.matmul(mh, flat), mw.T).reshape(b, c, h * scale, w * scale)
    if squeeze:
        out = out[0]

    def bw(g):
        gd = g[None] if squeeze else g
        gflat = gd.reshape(b * c, h * scale, w * scale)
        gx = np.matmul(np.matmul(mh.T, gflat), mw).reshape(b, c, h, w)
        return (gx[0] if squeeze else gx,)

    return _make(out, (x,), bw, "bilinear_upsample")


def block_mean(x, factor):
    """Average-pool by an integer factor (used to match map resolutions)."""
    x = as_tensor(x)
    xd, squeeze = _as_batched(x.data)
    b, c, h, w = xd.shape
    if h % factor or w % factor:
        raise DimensionError(f"extent {h}x{w} not divisible by factor {factor}")
    y = x.reshape((b, c, h // factor, factor, w // factor, factor)) if not squeeze else x.reshape(
        (1, c, h // factor, factor, w // factor, factor)
    )
    y = y.mean(axis=(3, 5))
    if squeeze:
        y = y.reshape((c, h // factor, w // factor))
    return y
