"""Training objectives: class-weighted cross-entropy for segmentation plus a
focal loss on the auxiliary edge head, combined with a fixed balance weight."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tensor import Tensor, as_tensor, log_softmax, power, sigmoid, softplus, tsum


@dataclass
class LossConfig:
    beta: float = 0.6
    gamma_focal: float = 2.0
    class_weights: np.ndarray = field(default_factory=lambda: np.ones(9))

    def __post_init__(self):
        w = np.asarray(self.class_weights, dtype=np.float64)
        if self.beta <= 0 or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ContractError("beta must be > 0 and class weights positive finite")
        self.class_weights = w


def weighted_ce(logits, labels, weights):
    """Mean over pixels of weights[y] * (-log softmax(logits)[y]).

    logits: [K,H,W] or [B,K,H,W]; labels: same spatial shape, ints in [0,K).
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=np.float64)
    axis = 0 if logits.ndim == 3 else 1
    k = logits.shape[axis]
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"labels outside [0, {k})")
    logp = log_softmax(logits, axis=axis)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    if logits.ndim == 3:
        np.put_along_axis(onehot, labels[None], 1.0, axis=0)
    else:
        np.put_along_axis(onehot, labels[:, None], 1.0, axis=1)
    wmap = onehot * weights.reshape((k, 1, 1) if logits.ndim == 3 else (1, k, 1, 1)).astype(
        logits.dtype
    )
    n_pixels = labels.size
    return tsum(logp * Tensor(-wmap, dtype=logits.dtype)) * (1.0 / n_pixels)


def focal_loss(edge_logits, edge_targets, gamma=2.0):
    """Mean of -(1 - p_t)^gamma * log(p_t) with logistic p_t.

    Computed from softplus for stability; gamma = 0 reduces to binary
    cross-entropy.
    """
    z = as_tensor(edge_logits)
    t = np.asarray(edge_targets).reshape(z.shape)
    sign = np.where(t > 0.5, 1.0, -1.0).astype(z.dtype)
    z_signed = z * Tensor(sign, dtype=z.dtype)
    log_pt = -softplus(-z_signed)
    if gamma == 0.0:
        per_pixel = -log_pt
    else:
        pt = sigmoid(z_signed)
        per_pixel = power(1.0 - pt, gamma) * (-log_pt)
    return per_pixel.mean()


def total_loss(seg, edge, cfg: LossConfig):
    """weighted_ce(seg) + beta * focal_loss(edge)."""
    seg_logits, labels = seg
    edge_logits, targets = edge
    l_seg = weighted_ce(seg_logits, labels, cfg.class_weights)
    l_edge = focal_loss(edge_logits, targets, cfg.gamma_focal)
    return l_seg + cfg.beta * l_edge
