"""Adaptive-moment optimizer with decoupled weight decay and a poly schedule."""

from __future__ import annotations

import numpy as np


def poly_lr(lr0, step, total_steps, power=0.9):
    """lr0 * (1 - t/T)^power; lr0 at t=0, exactly 0 at t=T."""
    frac = min(max(step / float(total_steps), 0.0), 1.0)
    return lr0 * (1.0 - frac) ** power


class AdamW:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - lr * (update + self.weight_decay * p.data).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
