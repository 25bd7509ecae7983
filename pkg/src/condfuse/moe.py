"""Condition-gated sparse expert fusion of paired feature maps.

A bank of 3x3 expert kernels maps the concatenated modality features to the
fused feature. A 1x1 gating convolution scores the experts per pixel from the
features plus the spatially broadcast condition embedding; only the top-k
experts contribute, with their softmax weights used as-is (no
renormalization unless asked for).
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ParameterError
from .imageops import conv2d
from .layers import Conv2d, Module, Parameter, he_init
from .tensor import Tensor, as_tensor, broadcast_to, concat, reshape, softmax, tsum


def expand(p_cond, h, w):
    """Broadcast a [C] or [B,C] condition vector to every spatial position."""
    p = as_tensor(p_cond)
    if p.ndim == 1:
        return broadcast_to(p.reshape((-1, 1, 1)), (p.shape[0], h, w))
    if p.ndim == 2:
        b, c = p.shape
        return broadcast_to(p.reshape((b, c, 1, 1)), (b, c, h, w))
    raise DimensionError(f"condition vector must be [C] or [B,C], got {p.shape}")


class ExpertBank(Module):
    """N experts of identical shape: 3x3 kernels from 2C to C channels.

    Initialization spreads the experts over modality preferences (the first
    half of the input channels is the color stream, the second the thermal
    stream) so routing has distinct behaviors to choose from on day one.
    """

    def __init__(self, channels, n_experts, rng):
        self.channels = channels
        self.n_experts = n_experts
        self.kernels = []
        gains = np.linspace(1.5, 0.5, n_experts) if n_experts > 1 else np.ones(1)
        for e in range(n_experts):
            k = he_init(rng, (channels, 2 * channels, 3, 3), 2 * channels * 9)
            k[:, :channels] *= gains[e]
            k[:, channels:] *= 2.0 - gains[e]
            self.kernels.append(Parameter(k))

    def stacked(self):
        return concat(self.kernels, axis=0)  # [N*C, 2C, 3, 3]


class GatingNetwork(Module):
    """1x1 convolution from (2C + cond) channels to one score per expert."""

    def __init__(self, channels, cond_dim, n_experts, rng):
        self.proj = Conv2d(2 * channels + cond_dim, n_experts, 1, rng)
        # small bias noise breaks the top-k tie symmetry at step zero
        self.proj.bias.data = (rng.standard_normal(n_experts) * 0.1).astype(
            self.proj.bias.dtype
        )

    def __call__(self, stacked):
        return self.proj(stacked)


def gate(f_rgb, f_th, p_cond, gating: GatingNetwork):
    """Per-pixel softmax selection scores over the expert bank."""
    f_rgb, f_th = as_tensor(f_rgb), as_tensor(f_th)
    if f_rgb.shape != f_th.shape:
        raise DimensionError(f"modality shapes differ: {f_rgb.shape} vs {f_th.shape}")
    h, w = f_rgb.shape[-2], f_rgb.shape[-1]
    cond = expand(p_cond, h, w)
    axis = 0 if f_rgb.ndim == 3 else 1
    stacked = concat([f_rgb, f_th, cond], axis=axis)
    logits = gating(stacked)
    return softmax(logits, axis=axis)


def topk_mask(scores, k):
    """Boolean top-k mask along the expert axis; ties go to the lower index."""
    order = np.argsort(-scores, axis=0, kind="stable")
    mask = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(mask, order[:k], True, axis=0)
    return mask


def sparse_fuse(f_rgb, f_th, s, bank: ExpertBank, k, routing_mask=None, renormalize=False):
    """Weighted sum of the top-k experts applied to the concatenated input.

    Non-selected experts contribute nothing and get no gradient at that pixel
    through the expert path; the selected weights keep their gradient through
    the softmax normalizer. Pass `routing_mask` to freeze the selection (used
    by gradient checks).
    """
    if k < 1 or k > bank.n_experts:
        raise ParameterError(f"k must be in [1, {bank.n_experts}], got {k}")
    f_rgb, f_th = as_tensor(f_rgb), as_tensor(f_th)
    s = as_tensor(s)
    batched = f_rgb.ndim == 4
    axis = 1 if batched else 0
    x = concat([f_rgb, f_th], axis=axis)
    n, c = bank.n_experts, bank.channels
    all_out = conv2d(x, bank.stacked(), padding=1)  # [.., N*C, H, W]
    h, w = all_out.shape[-2], all_out.shape[-1]
    if batched:
        b = all_out.shape[0]
        stackshape, wshape = (b, n, c, h, w), (b, n, 1, h, w)
        expert_axis = 1
        sd_first = np.moveaxis(s.data, 1, 0)  # [N, B, H, W] for masking
    else:
        stackshape, wshape = (n, c, h, w), (n, 1, h, w)
        expert_axis = 0
        sd_first = s.data
    if routing_mask is None:
        routing_mask = topk_mask(sd_first.reshape(n, -1), k).reshape(sd_first.shape)
    mask = np.moveaxis(routing_mask, 0, expert_axis) if batched else routing_mask
    weights = s * Tensor(mask.astype(s.dtype), dtype=s.dtype)
    if renormalize:
        weights = weights / (tsum(weights, axis=expert_axis, keepdims=True) + 1e-12)
    out = tsum(reshape(all_out, stackshape) * reshape(weights, wshape), axis=expert_axis)
    return out


def route_statistics(s, k, expert_axis=0):
    """Fraction of pixels at which each expert lands in the top-k; sums to k."""
    sd = s.data if isinstance(s, Tensor) else np.asarray(s)
    sd = np.moveaxis(sd, expert_axis, 0).reshape(sd.shape[expert_axis], -1)
    mask = topk_mask(sd, k)
    return mask.mean(axis=1) * 1.0


class SceneContextInjector(Module):
    """Adds cross-attended scene context to the fused feature.

    With a single context token the attention weight is exactly one, so the
    block reduces to a residual broadcast of the projected embedding.
    """

    def __init__(self, embed_dim, channels, rng):
        from .layers import Linear

        self.value = Linear(embed_dim, channels, rng)
        self.out = Linear(channels, channels, rng)
        self.channels = channels

    def __call__(self, f_fused, p_emb):
        f_fused = as_tensor(f_fused)
        r = self.out(self.value(as_tensor(p_emb)))  # [B, C] or [1, C]
        if f_fused.ndim == 3:
            r = r.reshape((self.channels, 1, 1))
        else:
            r = r.reshape((r.shape[0], self.channels, 1, 1))
        return f_fused + r
