"""Degradation-aware point attention over flattened feature maps.

The unbalanced map scores each pixel by local variance plus darkness. Soft
gating subtracts a learnable tanh bias from the attention logits per key;
the hard-cut baseline instead removes low-trust keys outright, which also
severs their gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError, ParameterError
from .imageops import local_stats
from .layers import Module, glorot_init
from .tensor import Parameter, Tensor, as_tensor, clamp, matmul, mul, softmax, tanh, transpose


class Gating(Enum):
    NO_PRIOR = "none"
    HARD_CUT = "hard"
    SOFT_TANH = "soft"


@dataclass
class UnbalancedMap:
    """Per-pixel degradation score: local variance + (1 - local mean)."""

    values: Tensor  # [1,H,W] or [B,1,H,W], range [0, 2]
    window: int


def compute_unbalanced_map(rgb, window=5) -> UnbalancedMap:
    """Score degradation of an RGB image in [0,1] from its luminance."""
    rgb = as_tensor(rgb)
    axis = 0 if rgb.ndim == 3 else 1
    lum = rgb.mean(axis=axis, keepdims=True)
    mean, var = local_stats(lum, window)
    return UnbalancedMap(values=var + (1.0 - mean), window=window)


def hard_cut_mask(m: UnbalancedMap, threshold=0.1):
    """Binary keep-mask: 1 where trust = 1 - clamp(m,0,1) >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ParameterError(f"threshold must be in (0,1), got {threshold}")
    trust = 1.0 - np.clip(m.values.data, 0.0, 1.0)
    return (trust >= threshold).astype(m.values.dtype)


def gated_attention(q, k, v, m_flat=None, mode=Gating.NO_PRIOR, lam=None, threshold=0.1):
    """Single-head attention with an optional per-key degradation bias.

    q, k: [..., N, d]; v: [..., N, d_v]; m_flat: [..., 1, N]. Soft mode
    subtracts lam * tanh(m) from every query's logits at that key. Hard mode
    drops keys whose trust falls below `threshold`; queries left with no keys
    produce a zero row (their value gradients are exactly zero).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    n, d = q.shape[-2], q.shape[-1]
    if k.shape[-2] != n or v.shape[-2] != n:
        raise DimensionError(f"q/k/v disagree on N: {q.shape} {k.shape} {v.shape}")
    logits = matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    logits = logits * (1.0 / np.sqrt(d))
    if mode != Gating.NO_PRIOR:
        if m_flat is None:
            raise ParameterError(f"{mode} needs the degradation map")
        m_flat = as_tensor(m_flat)
        if m_flat.shape[-1] != n:
            raise DimensionError(f"map covers {m_flat.shape[-1]} keys, attention has {n}")
    if mode == Gating.SOFT_TANH:
        if lam is None:
            raise ParameterError("soft gating needs lam")
        logits = logits - mul(lam, tanh(m_flat))
        return matmul(softmax(logits, axis=-1), v)
    if mode == Gating.HARD_CUT:
        trust = 1.0 - np.clip(m_flat.data, 0.0, 1.0)
        keep = trust >= threshold  # [..., 1, N]
        neg = np.where(keep, 0.0, -1e30).astype(logits.dtype)
        logits = logits + Tensor(neg, dtype=logits.dtype)
        attn = softmax(logits, axis=-1)
        if not keep.all():
            # Queries with no surviving key would otherwise softmax over the
            # raw logits; blind them completely instead.
            row_alive = np.broadcast_to(keep.any(axis=-1, keepdims=True), attn.shape)
            attn = mul(attn, Tensor(row_alive.astype(attn.dtype), dtype=attn.dtype))
        return matmul(attn, v)
    return matmul(softmax(logits, axis=-1), v)


class GatedPointAttention(Module):
    """Learned q/k/v projections around `gated_attention` on [.., N, C] input."""

    def __init__(self, channels, qk_dim, rng, mode=Gating.SOFT_TANH, threshold=0.1):
        self.mode = mode
        self.threshold = threshold
        self.qk_dim = qk_dim
        self.w_q = Parameter(glorot_init(rng, (channels, qk_dim), channels, qk_dim))
        self.w_k = Parameter(glorot_init(rng, (channels, qk_dim), channels, qk_dim))
        # zero-init: the attended residual starts inert and grows only where
        # the gradient finds it useful
        self.w_v = Parameter(np.zeros((channels, channels), dtype=self.w_q.dtype))
        self.lam = Parameter(np.ones((), dtype=self.w_q.dtype))

    def _project(self, x, w):
        lead = x.shape[:-1]
        flat = x.reshape((-1, x.shape[-1]))
        return matmul(flat, w).reshape(lead + (w.shape[-1],))

    def __call__(self, x, m_flat=None):
        q = self._project(x, self.w_q)
        k = self._project(x, self.w_k)
        v = self._project(x, self.w_v)
        return gated_attention(
            q, k, v, m_flat=m_flat, mode=self.mode, lam=self.lam, threshold=self.threshold
        )
