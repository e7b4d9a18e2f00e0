"""Adam optimizer with per-parameter moment buffers."""

from __future__ import annotations

import numpy as np


class Adam:
    """Bias-corrected Adam. Parameters whose gradient is unset are skipped,
    so they (and their moments) stay untouched."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self):
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                continue
            p.step += 1
            p.m *= self.beta1
            p.m += (1.0 - self.beta1) * g
            p.v *= self.beta2
            p.v += (1.0 - self.beta2) * (g * g)
            mhat = p.m / (1.0 - self.beta1**p.step)
            vhat = p.v / (1.0 - self.beta2**p.step)
            p.tensor.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(
                p.tensor.data.dtype
            )

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
