"""AdamW with decoupled weight decay."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .tensor import Array, Tensor


class AdamW:
    """Moment estimates, step counter and hyper-parameters for one trainer.

    The update is ``p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)``
    with bias-corrected moments. Parameters missing from the gradient mapping
    are treated as zero-gradient (decay still applies).
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-5,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Mapping[Tensor, Array] | None = None) -> None:
        """Apply one update; `grads` defaults to each parameter's `.grad`."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            if grads is not None:
                g = grads.get(p)
            else:
                g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter {p.data.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data = p.data - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                         + self.weight_decay * p.data)
