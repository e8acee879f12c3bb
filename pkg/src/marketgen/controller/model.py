"""Conditional diffusion over market-state days: training, guidance, sampling.

``MetaController`` is the fit/sample estimator tying everything together: it
owns the state normalizer, the indicator bins, the condition encoder and the
U-Net denoiser. Sampling applies classifier-free guidance and either the
stochastic ancestral sampler or the deterministic subsequence sampler.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ..marketstate import (
    INDICATOR_NAMES,
    IndicatorBinner,
    MarketStateDay,
    StateNormalizer,
    indicators_from_states,
    states_to_array,
)
from ..tensorkit import AdamW, Tape, Tensor, load_arrays, mean_squared_error, save_arrays
from .network import (
    ContinuousConditionEncoder,
    Denoiser,
    DenoiserConfig,
    DiscreteConditionEncoder,
)
from .schedule import DiffusionSchedule, ddim_step_subsequence, make_schedule

EpsFn = Callable[[np.ndarray, int], np.ndarray]


def forward_diffuse(x0: np.ndarray, step, noise: np.ndarray,
                    schedule: DiffusionSchedule) -> np.ndarray:
    """Closed-form corruption ``sqrt(ab_n) x0 + sqrt(1 - ab_n) noise``.

    `step` may be a scalar or one step per sample, each in 1..N.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} != signal shape {x0.shape}")
    step = np.asarray(step, dtype=np.int64)
    if np.any(step < 1) or np.any(step > schedule.n_steps):
        raise ValueError(f"steps must lie in 1..{schedule.n_steps}")
    ab = schedule.alpha_bar[step - 1]
    if step.ndim:
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, scale: float) -> np.ndarray:
    """Guided estimate ``(1 - s) * unconditional + s * conditional``."""
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError("branch shapes differ")
    if scale == 0.0:
        return eps_uncond
    if scale == 1.0:
        return eps_cond
    return (1.0 - scale) * eps_uncond + scale * eps_cond


def ddpm_sample(eps_fn: EpsFn, schedule: DiffusionSchedule, shape: tuple[int, ...],
                rng: np.random.Generator) -> np.ndarray:
    """Ancestral sampling from pure noise; the final step injects no noise."""
    x = rng.standard_normal(shape)
    for n in range(schedule.n_steps, 0, -1):
        eps = eps_fn(x, n)
        coef = (1.0 - schedule.alpha[n - 1]) / np.sqrt(1.0 - schedule.alpha_bar[n - 1])
        x = (x - coef * eps) / np.sqrt(schedule.alpha[n - 1])
        if n > 1:
            x = x + schedule.sigma[n - 1] * rng.standard_normal(shape)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite sample at step {n}")
    return x


def ddim_sample(eps_fn: EpsFn, schedule: DiffusionSchedule, x_start: np.ndarray,
                sample_steps: int = 20, x0_clamp: float | None = 5.0) -> np.ndarray:
    """Deterministic subsequence sampler (no noise injection, no rng).

    The implied clean signal is clamped to ``[-x0_clamp, x0_clamp]`` in
    normalized space before each jump, guarding strongly-guided runs.
    """
    taus = ddim_step_subsequence(schedule.n_steps, sample_steps)
    x = np.asarray(x_start, dtype=np.float64)
    for i in range(len(taus) - 1, -1, -1):
        n = int(taus[i])
        prev = int(taus[i - 1]) if i else 0
        ab_n = schedule.alpha_bar_at(n)
        ab_prev = schedule.alpha_bar_at(prev)
        eps = eps_fn(x, n)
        x0 = (x - np.sqrt(1.0 - ab_n) * eps) / np.sqrt(ab_n)
        if x0_clamp is not None:
            x0 = np.clip(x0, -x0_clamp, x0_clamp)
        x = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite sample at step {n}")
    return x


class MetaController(BaseEstimator):
    """Conditional denoising-diffusion model over market-state days.

    fit(X[, y]) consumes raw-space states shaped (n_days, 2, T) (or a list of
    ``MarketStateDay``) plus per-day indicator values; sample(...) returns
    raw-space states again. Both condition encoders train jointly with the
    denoiser under random condition dropout.
    """

    def __init__(self, target: str = "daily_return", encoder: str = "continuous",
                 base_width: int = 64, width_mults: tuple[int, ...] = (1, 4, 16),
                 kernel_size: int = 15, embed_dim: int = 256, norm_groups: int = 8,
                 n_steps: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02,
                 epochs: int = 10, batch_size: int = 256, lr: float = 1e-5,
                 weight_decay: float = 0.0, p_uncond: float = 0.5,
                 max_steps: int | None = None, ddim_steps: int = 20,
                 x0_clamp: float = 5.0, seed: int = 0):
        self.target = target
        self.encoder = encoder
        self.base_width = base_width
        self.width_mults = width_mults
        self.kernel_size = kernel_size
        self.embed_dim = embed_dim
        self.norm_groups = norm_groups
        self.n_steps = n_steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.p_uncond = p_uncond
        self.max_steps = max_steps
        self.ddim_steps = ddim_steps
        self.x0_clamp = x0_clamp
        self.seed = seed

    # -- construction -------------------------------------------------------

    def _build(self, minutes: int, init_rng: np.random.Generator) -> None:
        self.config_ = DenoiserConfig(
            channels=2, length=minutes, base_width=self.base_width,
            width_mults=tuple(self.width_mults), kernel_size=self.kernel_size,
            embed_dim=self.embed_dim, norm_groups=self.norm_groups,
        )
        self.schedule_ = make_schedule(self.n_steps, self.beta_start, self.beta_end)
        self.net_ = Denoiser(self.config_, init_rng)
        if self.encoder == "discrete":
            self.encoder_ = DiscreteConditionEncoder(5, self.embed_dim, init_rng)
        elif self.encoder == "continuous":
            self.encoder_ = ContinuousConditionEncoder(self.embed_dim, init_rng)
        else:
            raise ValueError(f"unknown encoder mode {self.encoder!r}")

    @staticmethod
    def _as_array(X) -> np.ndarray:
        if isinstance(X, np.ndarray):
            arr = np.asarray(X, dtype=np.float64)
            if arr.ndim != 3 or arr.shape[1] != 2:
                raise ValueError(f"expected (n_days, 2, T), got {arr.shape}")
            return arr
        return states_to_array(list(X))

    # -- training -------------------------------------------------------------

    def fit(self, X, y=None):
        if self.target not in INDICATOR_NAMES:
            raise ValueError(f"unknown target indicator {self.target!r}")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ValueError("p_uncond must lie in [0, 1]")
        X = self._as_array(X)
        if y is None:
            y = np.array([indicators_from_states(MarketStateDay.from_array(day))
                          .value(self.target) for day in X])
        else:
            y = np.asarray(y, dtype=np.float64)
            if y.shape != (X.shape[0],):
                raise ValueError("one indicator value per day required")

        master = np.random.SeedSequence(self.seed)
        init_seq, train_seq = master.spawn(2)
        self._build(X.shape[2], np.random.default_rng(init_seq))
        train_rng = np.random.default_rng(train_seq)

        self.normalizer_ = StateNormalizer().fit(X)
        Z = self.normalizer_.transform(X)
        self.binner_ = IndicatorBinner().fit(y)
        self.cond_mean_ = float(y.mean())
        self.cond_std_ = float(max(y.std(), 1e-8))
        if self.encoder == "discrete":
            cond = self.binner_.transform(y).astype(np.int64)
        else:
            cond = (y - self.cond_mean_) / self.cond_std_

        params = (list(self.net_.parameters()) + list(self.encoder_.parameters()))
        opt = AdamW(params, lr=self.lr, weight_decay=self.weight_decay)
        budget = self.max_steps if self.max_steps is not None else np.inf

        n_days = Z.shape[0]
        self.losses_: list[float] = []
        done = False
        for _ in range(self.epochs):
            if done:
                break
            order = train_rng.permutation(n_days)
            for lo in range(0, n_days, self.batch_size):
                idx = order[lo:lo + self.batch_size]
                self.losses_.append(
                    self._train_step(Z[idx], cond[idx], opt, train_rng))
                if len(self.losses_) >= budget:
                    done = True
                    break
        return self

    def _train_step(self, batch: np.ndarray, cond: np.ndarray, opt: AdamW,
                    rng: np.random.Generator) -> float:
        n_batch = batch.shape[0]
        steps = rng.integers(1, self.schedule_.n_steps + 1, n_batch)
        noise = rng.standard_normal(batch.shape)
        corrupted = forward_diffuse(batch, steps, noise, self.schedule_)
        drop = rng.random(n_batch) < self.p_uncond
        with Tape() as tape:
            cond_emb = self.encoder_.encode(cond, drop)
            pred = self.net_(Tensor(corrupted), steps, cond_emb)
            loss = mean_squared_error(pred, noise)
        value = loss.item()
        if not np.isfinite(value):
            raise FloatingPointError(
                f"non-finite training loss at step {len(self.losses_) + 1}")
        grads = tape.backward(loss)
        opt.step(grads)
        return value

    # -- sampling -------------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("MetaController is not fitted")

    def _resolve_condition(self, label, value):
        """Returns the encoder input for a requested scenario."""
        if self.encoder == "discrete":
            if label is None:
                if value is None:
                    raise ValueError("discrete sampling needs a class label")
                label = self.binner_.classify(value)
            if not 0 <= int(label) < 5:
                raise ValueError(f"class label {label} out of range 0..4")
            return int(label)
        if value is None:
            if label is None:
                raise ValueError("continuous sampling needs a target value")
            value = float(self.binner_.medians_[int(label)])
        return (float(value) - self.cond_mean_) / self.cond_std_

    def _eps_fn(self, n_samples: int, cond, guidance_scale: float) -> EpsFn:
        uncond_emb = Tensor(self.encoder_.encode_uncond(n_samples).data)
        cond_emb = None
        if cond is not None:
            cond_emb = Tensor(self.encoder_.encode(np.full(n_samples, cond)).data)

        def eps_fn(x: np.ndarray, n: int) -> np.ndarray:
            steps = np.full(n_samples, n)
            xt = Tensor(x)
            if cond_emb is None or guidance_scale == 0.0:
                return self.net_(xt, steps, uncond_emb).data
            eps_cond = self.net_(xt, steps, cond_emb).data
            if guidance_scale == 1.0:
                return eps_cond
            eps_uncond = self.net_(xt, steps, uncond_emb).data
            return cfg_combine(eps_uncond, eps_cond, guidance_scale)

        return eps_fn

    def sample(self, n_samples: int = 1, label=None, value=None,
               guidance_scale: float = 1.0, method: str = "ddim",
               seed: int | None = None,
               rng: np.random.Generator | None = None) -> np.ndarray:
        """Draw raw-space state days shaped (n_samples, 2, T).

        Omitting both `label` and `value` samples the unconditional model.
        """
        self._check_fitted()
        if guidance_scale < 0:
            raise ValueError("guidance scale must be >= 0")
        if rng is None:
            rng = np.random.default_rng(0 if seed is None else seed)
        cond = None
        if label is not None or value is not None:
            cond = self._resolve_condition(label, value)
        eps_fn = self._eps_fn(n_samples, cond, guidance_scale)
        shape = (n_samples, 2, self.config_.length)
        if method == "ddpm":
            z = ddpm_sample(eps_fn, self.schedule_, shape, rng)
        elif method == "ddim":
            z = ddim_sample(eps_fn, self.schedule_, rng.standard_normal(shape),
                            min(self.ddim_steps, self.schedule_.n_steps),
                            self.x0_clamp)
        else:
            raise ValueError(f"unknown sampling method {method!r}")
        return self.normalizer_.inverse_transform(z)

    # -- persistence -------------------------------------------------------------

    def save(self, path_base: str | Path) -> tuple[Path, Path]:
        """Write `<base>.bin` (weights) and `<base>.json` (config sidecar)."""
        self._check_fitted()
        base = Path(path_base)
        bin_path = base.with_suffix(".bin")
        json_path = base.with_suffix(".json")
        arrays = {f"net.{k}": v for k, v in self.net_.state_arrays().items()}
        arrays.update({f"encoder.{k}": v for k, v in self.encoder_.state_arrays().items()})
        save_arrays(bin_path, arrays)
        params = self.get_params()
        params["width_mults"] = list(params["width_mults"])
        sidecar = {
            "format": 1,
            "estimator": params,
            "minutes": self.config_.length,
            "normalizer": self.normalizer_.to_dict(),
            "bins": self.binner_.to_dict(),
            "cond_mean": self.cond_mean_,
            "cond_std": self.cond_std_,
        }
        json_path.write_text(json.dumps(sidecar, sort_keys=True, indent=1),
                             encoding="utf-8")
        return bin_path, json_path

    @classmethod
    def load(cls, path_base: str | Path) -> "MetaController":
        base = Path(path_base)
        sidecar = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
        if sidecar.get("format") != 1:
            raise ValueError("unsupported checkpoint sidecar format")
        params = dict(sidecar["estimator"])
        params["width_mults"] = tuple(params["width_mults"])
        est = cls(**params)
        est._build(int(sidecar["minutes"]), np.random.default_rng(0))
        est.normalizer_ = StateNormalizer.from_dict(sidecar["normalizer"])
        est.binner_ = IndicatorBinner.from_dict(sidecar["bins"])
        est.cond_mean_ = float(sidecar["cond_mean"])
        est.cond_std_ = float(sidecar["cond_std"])
        arrays = load_arrays(base.with_suffix(".bin"))
        est.net_.load_state_arrays(
            {k[len("net."):]: v for k, v in arrays.items() if k.startswith("net.")})
        est.encoder_.load_state_arrays(
            {k[len("encoder."):]: v for k, v in arrays.items() if k.startswith("encoder.")})
        est.losses_ = []
        return est
