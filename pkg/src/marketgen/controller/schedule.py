"""Variance schedule for the denoising chain."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step corruption coefficients, index 0 holding step 1.

    ``alpha_bar_at(n)`` accepts n in 0..N with the convention that step 0 is
    the clean signal (cumulative product 1).
    """

    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)
    sigma: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a non-empty 1-D array")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        alpha = 1.0 - beta
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", np.cumprod(alpha))
        object.__setattr__(self, "sigma", np.sqrt(beta))

    @property
    def n_steps(self) -> int:
        return self.beta.size

    def alpha_bar_at(self, n: int) -> float:
        if n == 0:
            return 1.0
        return float(self.alpha_bar[n - 1])


def make_schedule(n_steps: int = 200, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> DiffusionSchedule:
    """Linear beta interpolation; the reference denoising-diffusion choice."""
    if n_steps < 1:
        raise ValueError("need at least one step")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"invalid beta range ({beta_start}, {beta_end})")
    return DiffusionSchedule(beta=np.linspace(beta_start, beta_end, n_steps))


def ddim_step_subsequence(n_steps: int, sample_steps: int) -> np.ndarray:
    """Evenly spaced, strictly increasing steps ending at N."""
    if not 1 <= sample_steps <= n_steps:
        raise ValueError(f"sample steps {sample_steps} must be in 1..{n_steps}")
    taus = np.round(np.linspace(n_steps / sample_steps, n_steps, sample_steps)).astype(int)
    if np.any(np.diff(taus) <= 0) or taus[0] < 1 or taus[-1] != n_steps:
        raise ValueError(f"cannot build {sample_steps} distinct steps out of {n_steps}")
    return taus
