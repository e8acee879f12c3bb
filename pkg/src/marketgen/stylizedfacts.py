"""Evaluation statistics and the synthetic market-state corpus.

The fact set follows the standard microstructure checklist: distribution of
minutely log returns, return autocorrelation, volatility clustering
(autocorrelation of squared returns) and the order imbalance ratio.
Distribution discrepancy is measured as a smoothed histogram K-L divergence
over pooled samples.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .marketstate import IndicatorSet, MarketStateDay, indicators_from_states

DEFAULT_LAGS = (1, 2, 3, 5, 10)


def autocorr(series, lag: int) -> float:
    """Pearson correlation of (x_t, x_{t+lag}); 0 for flat series."""
    x = np.asarray(series, dtype=np.float64)
    if lag < 0:
        raise ValueError("lag must be >= 0")
    if lag == 0:
        return 1.0
    if x.size <= lag + 1:
        raise ValueError(f"series of length {x.size} too short for lag {lag}")
    a, b = x[:-lag], x[lag:]
    sa, sb = a.std(), b.std()
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


@dataclass(frozen=True)
class FactVector:
    """Pooled stylized-fact samples for one set of generated days.

    ``retac``/``volc`` hold one row per day, one column per configured lag.
    """

    minr: np.ndarray
    retac: np.ndarray
    volc: np.ndarray
    oir: np.ndarray
    lags: tuple[int, ...]


def compute_facts(price_paths: Sequence[np.ndarray], oir_paths: Sequence[np.ndarray],
                  lags: tuple[int, ...] = DEFAULT_LAGS) -> FactVector:
    """Facts over a set of days, each given as (prices incl. open, per-minute OIR)."""
    if len(price_paths) != len(oir_paths):
        raise ValueError("need one OIR series per price path")
    minr, retac, volc, oir = [], [], [], []
    for prices, imbalances in zip(price_paths, oir_paths):
        returns = np.diff(np.log(np.asarray(prices, dtype=np.float64)))
        minr.append(returns)
        retac.append([autocorr(returns, lag) for lag in lags])
        volc.append([autocorr(returns ** 2, lag) for lag in lags])
        oir.append(np.asarray(imbalances, dtype=np.float64))
    return FactVector(
        minr=np.concatenate(minr),
        retac=np.asarray(retac),
        volc=np.asarray(volc),
        oir=np.concatenate(oir),
        lags=tuple(lags),
    )


def kl_divergence(real_samples, sim_samples, bins: int = 50,
                  eps: float = 1e-9) -> float:
    """KL(real || sim) over shared uniform bins with additive smoothing."""
    real = np.asarray(real_samples, dtype=np.float64).ravel()
    sim = np.asarray(sim_samples, dtype=np.float64).ravel()
    if real.size == 0 or sim.size == 0:
        raise ValueError("both sample sets must be non-empty")
    lo = min(real.min(), sim.min())
    hi = max(real.max(), sim.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    p = np.histogram(real, bins=edges)[0].astype(np.float64) + eps
    q = np.histogram(sim, bins=edges)[0].astype(np.float64) + eps
    p /= p.sum()
    q /= q.sum()
    return float(np.sum(p * np.log(p / q)))


def controllability_mse(targets, realized) -> float:
    """Mean squared distance between requested and realized indicator values."""
    targets = np.asarray(targets, dtype=np.float64)
    realized = np.asarray(realized, dtype=np.float64)
    if targets.shape != realized.shape:
        raise ValueError(f"shape mismatch {targets.shape} vs {realized.shape}")
    return float(np.mean((realized - targets) ** 2))


# ---------------------------------------------------------------------------
# Synthetic corpus (stand-in for a proprietary tick archive)
# ---------------------------------------------------------------------------

def synth_corpus(seed: int, days: int, minutes: int = 236,
                 base_arrival: float = 60.0, vol_base: float = 1e-3,
                 drift_daily_std: float = 0.01, garch_alpha: float = 0.1,
                 garch_beta: float = 0.85, activity_coupling: float = 1.0,
                 ) -> tuple[list[MarketStateDay], list[IndicatorSet]]:
    """Seeded state-day generator with clustered volatility and coupled activity.

    Each day draws a drift (daily scale ~1%) and a volatility regime; minute
    returns follow a GARCH-style variance recursion and arrival rates rise
    with the size of the concurrent move, so activity and volatility co-move.
    """
    if days < 1:
        raise ValueError("need at least one day")
    rng = np.random.default_rng(seed)
    omega = 1.0 - garch_alpha - garch_beta
    if omega <= 0:
        raise ValueError("garch_alpha + garch_beta must stay below 1")
    states, indicators = [], []
    for _ in range(days):
        # Per-minute share of a daily drift with std `drift_daily_std`.
        drift = rng.normal(0.0, drift_daily_std) / minutes
        sigma_day = vol_base * np.exp(rng.normal(0.0, 0.5))
        var_target = sigma_day ** 2
        shocks = rng.standard_normal(minutes)
        returns = np.empty(minutes)
        var = var_target
        for t in range(minutes):
            resid = np.sqrt(var) * shocks[t]
            returns[t] = drift + resid
            var = omega * var_target + garch_alpha * resid ** 2 + garch_beta * var
        rates = np.maximum(
            np.round(base_arrival * (1.0 + activity_coupling
                                     * np.abs(returns) / sigma_day)), 0.0)
        day = MarketStateDay(returns=returns, arrival_rates=rates).validate_raw()
        states.append(day)
        indicators.append(indicators_from_states(day))
    return states, indicators
