"""Market-state data model: extraction from order flow, indicators, scaling, bins.

A market-state day is the pair of minutely series the generative model works
on: log mid-price returns and order arrival rates, both of length ``T``
(236 trading minutes by default). Extraction anchors the return series on a
day-open reference mid-price ``p_0`` so that ``T`` minute buckets yield
exactly ``T`` returns and ``T`` arrival counts.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

DEFAULT_MINUTES = 236

BIN_LABELS = ("lower", "low", "mid", "high", "higher")

INDICATOR_NAMES = ("daily_return", "amplitude", "volatility")


@dataclass(frozen=True)
class MarketStateDay:
    """One trading day's paired minutely series."""

    returns: np.ndarray
    arrival_rates: np.ndarray

    def __post_init__(self):
        returns = np.asarray(self.returns, dtype=np.float64)
        arrivals = np.asarray(self.arrival_rates, dtype=np.float64)
        object.__setattr__(self, "returns", returns)
        object.__setattr__(self, "arrival_rates", arrivals)
        if returns.ndim != 1 or arrivals.ndim != 1:
            raise ValueError("state series must be one-dimensional")
        if returns.shape != arrivals.shape:
            raise ValueError(
                f"series lengths differ: {returns.shape[0]} vs {arrivals.shape[0]}")
        if returns.shape[0] < 1:
            raise ValueError("state series must be non-empty")
        if not (np.all(np.isfinite(returns)) and np.all(np.isfinite(arrivals))):
            raise ValueError("state series contain non-finite values")

    @property
    def minutes(self) -> int:
        return self.returns.shape[0]

    def validate_raw(self) -> "MarketStateDay":
        """Raw-space check: arrival rates cannot be negative."""
        if np.any(self.arrival_rates < 0):
            raise ValueError("raw arrival rates must be >= 0")
        return self

    def as_array(self) -> np.ndarray:
        """(2, T) array with channel 0 = returns, channel 1 = arrival rates."""
        return np.stack([self.returns, self.arrival_rates])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "MarketStateDay":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != 2:
            raise ValueError(f"expected (2, T) array, got {arr.shape}")
        return cls(returns=arr[0], arrival_rates=arr[1])


@dataclass(frozen=True)
class IndicatorSet:
    """Aggregate daily indicators derived from a minute price series."""

    daily_return: float
    amplitude: float
    volatility: float

    def __post_init__(self):
        values = (self.daily_return, self.amplitude, self.volatility)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("indicators must be finite")
        if self.amplitude < 0 or self.volatility < 0:
            raise ValueError("amplitude and volatility must be >= 0")

    def value(self, name: str) -> float:
        if name not in INDICATOR_NAMES:
            raise ValueError(f"unknown indicator {name!r}")
        return getattr(self, name)


def compute_indicators(minute_prices: Sequence[float]) -> IndicatorSet:
    """Daily return, amplitude and per-minute volatility of a price path.

    ``minute_prices`` holds the day-open reference followed by the T
    minute-end prices.
    """
    prices = np.asarray(minute_prices, dtype=np.float64)
    if prices.ndim != 1 or prices.size < 2:
        raise ValueError("need at least an open and one minute close")
    if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
        raise ValueError("prices must be finite and positive")
    logp = np.log(prices)
    returns = np.diff(logp)
    return IndicatorSet(
        daily_return=float(logp[-1] - logp[0]),
        amplitude=float((prices.max() - prices.min()) / prices[0]),
        volatility=float(returns.std()),
    )


def rebuild_prices(returns: np.ndarray, open_price: float = 1.0) -> np.ndarray:
    """Price path implied by a return series: ``p_t = p_0 * exp(sum r)``."""
    if open_price <= 0:
        raise ValueError("open price must be positive")
    return open_price * np.exp(np.concatenate([[0.0], np.cumsum(returns)]))


def indicators_from_states(state: MarketStateDay) -> IndicatorSet:
    """Indicators of the price path a state day implies (scale-free)."""
    return compute_indicators(rebuild_prices(state.returns))


# ---------------------------------------------------------------------------
# Extraction from raw order flow
# ---------------------------------------------------------------------------

ORDER_KINDS = ("buy_limit", "sell_limit", "cancel")


def parse_tick_line(line: str) -> dict:
    """One order per JSONL line: {"t": seconds, "p": price, "q": qty, "o": kind}.

    Generated flows encode the side as 1 (buy) / 0 (sell); both encodings
    parse to the same record.
    """
    rec = json.loads(line)
    kind = rec.get("o")
    if kind == 1:
        kind = "buy_limit"
    elif kind == 0:
        kind = "sell_limit"
    if kind not in ORDER_KINDS:
        raise ValueError(f"unknown order kind {rec.get('o')!r}")
    t = float(rec["t"])
    p = float(rec["p"])
    q = int(rec["q"])
    if not math.isfinite(t) or t < 0:
        raise ValueError(f"bad timestamp {rec['t']!r}")
    if not math.isfinite(p) or p <= 0:
        raise ValueError(f"non-positive price {rec['p']!r}")
    if q < 1:
        raise ValueError(f"non-positive quantity {rec['q']!r}")
    return {"t": t, "p": p, "q": q, "o": kind}


def extract_market_states(records: Iterable[dict], minutes: int,
                          tick: float = 0.01) -> MarketStateDay:
    """Rebuild the book from one day's order records and read off the states.

    ``records`` are parsed tick records, time-ordered, spanning at most
    ``minutes`` minute buckets. The return series is anchored on the first
    two-sided mid-price observed during the opening bucket; buckets without a
    quote carry the previous mid forward (zero return).
    """
    from .exchange import Exchange, Order

    book = Exchange(seed_price=None, tick=tick)
    counts = np.zeros(minutes, dtype=np.float64)
    mids = np.full(minutes + 1, np.nan)
    horizon = 60.0 * minutes

    last_t = -math.inf
    bucket = 0

    def close_through(target_bucket: int) -> None:
        nonlocal bucket
        while bucket < target_bucket:
            mid = book.mid_price()
            if mid is not None:
                mids[bucket + 1] = mid
            elif not math.isnan(mids[bucket]):
                mids[bucket + 1] = mids[bucket]
            bucket += 1

    for rec in records:
        t = float(rec["t"])
        if t < last_t:
            raise ValueError("timestamps must be non-decreasing")
        if t >= horizon:
            raise ValueError(f"order at {t}s exceeds the {minutes}-minute day")
        last_t = t
        close_through(min(int(t // 60.0), minutes - 1))
        kind = rec["o"]
        if kind == "cancel":
            book.cancel_at_price(rec["p"], rec["q"])
        else:
            side = 1 if kind == "buy_limit" else 0
            book.submit(Order(t=t, price=rec["p"], qty=rec["q"], side=side))
            if math.isnan(mids[0]):
                mid = book.mid_price()
                if mid is not None:
                    mids[0] = mid
        counts[min(int(t // 60.0), minutes - 1)] += 1.0

    if math.isnan(mids[0]):
        raise ValueError("no two-sided quote in the opening minute")
    close_through(minutes)

    returns = np.diff(np.log(mids))
    return MarketStateDay(returns=returns, arrival_rates=counts).validate_raw()


# ---------------------------------------------------------------------------
# Scaling and binning
# ---------------------------------------------------------------------------

class StateNormalizer(TransformerMixin, BaseEstimator):
    """Channel-wise z-score over a stack of state days shaped (n, 2, T).

    Degenerate channels get their standard deviation clamped to ``std_floor``
    so the transform is always invertible.
    """

    def __init__(self, std_floor: float = 1e-8):
        self.std_floor = std_floor

    def fit(self, X, y=None):
        X = self._validate(X)
        self.mean_ = X.mean(axis=(0, 2))
        self.std_ = np.maximum(X.std(axis=(0, 2)), self.std_floor)
        return self

    def transform(self, X):
        self._check_fitted()
        X = self._validate(X)
        return (X - self.mean_[None, :, None]) / self.std_[None, :, None]

    def inverse_transform(self, X):
        self._check_fitted()
        X = self._validate(X)
        return X * self.std_[None, :, None] + self.mean_[None, :, None]

    def to_dict(self) -> dict:
        self._check_fitted()
        return {"mean": self.mean_.tolist(), "std": self.std_.tolist(),
                "std_floor": self.std_floor}

    @classmethod
    def from_dict(cls, payload: dict) -> "StateNormalizer":
        norm = cls(std_floor=float(payload.get("std_floor", 1e-8)))
        norm.mean_ = np.asarray(payload["mean"], dtype=np.float64)
        norm.std_ = np.asarray(payload["std"], dtype=np.float64)
        return norm

    @staticmethod
    def _validate(X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != 2:
            raise ValueError(f"expected (n_days, 2, T), got {X.shape}")
        if X.shape[0] < 1:
            raise ValueError("corpus must be non-empty")
        if not np.all(np.isfinite(X)):
            raise ValueError("corpus contains non-finite values")
        return X

    def _check_fitted(self):
        if not hasattr(self, "mean_"):
            raise NotFittedError("StateNormalizer is not fitted")


class IndicatorBinner(TransformerMixin, BaseEstimator):
    """Five right-open percentile bins (p20/p40/p60/p80) over indicator values.

    ``transform`` maps values to labels 0..4 (lower..higher); ``medians_``
    holds each bin's median, the continuous stand-in for the bin's scenario.
    """

    def __init__(self):
        pass

    def fit(self, values, y=None):
        values = np.asarray(values, dtype=np.float64).ravel()
        if np.unique(values).size < 5:
            raise ValueError("need at least 5 distinct values to form bins")
        edges = np.percentile(values, [20.0, 40.0, 60.0, 80.0])
        if np.any(np.diff(edges) <= 0):
            raise ValueError("percentile edges are not strictly increasing")
        labels = np.searchsorted(edges, values, side="right")
        medians = np.empty(5)
        for k in range(5):
            members = values[labels == k]
            if members.size == 0:
                raise ValueError(f"bin {k} is empty; values too concentrated")
            medians[k] = np.median(members)
        self.edges_ = edges
        self.medians_ = medians
        return self

    def transform(self, values):
        self._check_fitted()
        values = np.asarray(values, dtype=np.float64)
        return np.searchsorted(self.edges_, values, side="right")

    def classify(self, value: float) -> int:
        return int(self.transform(np.asarray([value]))[0])

    def to_dict(self) -> dict:
        self._check_fitted()
        return {"edges": self.edges_.tolist(), "medians": self.medians_.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "IndicatorBinner":
        binner = cls()
        binner.edges_ = np.asarray(payload["edges"], dtype=np.float64)
        binner.medians_ = np.asarray(payload["medians"], dtype=np.float64)
        return binner

    def _check_fitted(self):
        if not hasattr(self, "edges_"):
            raise NotFittedError("IndicatorBinner is not fitted")


# ---------------------------------------------------------------------------
# Corpus file format
# ---------------------------------------------------------------------------

CORPUS_HEADER = "day_id,minute,return,arrival_rate"


def save_corpus(path: str | Path, states: Sequence[MarketStateDay]) -> None:
    lines = [CORPUS_HEADER]
    for day_id, state in enumerate(states):
        for minute in range(state.minutes):
            lines.append(f"{day_id},{minute},{float(state.returns[minute])!r},"
                         f"{float(state.arrival_rates[minute])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(path: str | Path) -> list[MarketStateDay]:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not text or text[0].strip() != CORPUS_HEADER:
        raise ValueError(f"{path}: expected header {CORPUS_HEADER!r}")
    per_day: dict[int, list[tuple[int, float, float]]] = {}
    for lineno, line in enumerate(text[1:], start=2):
        parts = line.strip().split(",")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 columns")
        day, minute = int(parts[0]), int(parts[1])
        per_day.setdefault(day, []).append((minute, float(parts[2]), float(parts[3])))
    states = []
    for day in sorted(per_day):
        rows = sorted(per_day[day])
        if [m for m, _, _ in rows] != list(range(len(rows))):
            raise ValueError(f"{path}: day {day} has missing or duplicate minutes")
        states.append(MarketStateDay(
            returns=np.array([r for _, r, _ in rows]),
            arrival_rates=np.array([a for _, _, a in rows]),
        ))
    return states


def states_to_array(states: Sequence[MarketStateDay]) -> np.ndarray:
    """Stack days into (n, 2, T); all days must share one length."""
    lengths = {s.minutes for s in states}
    if len(lengths) != 1:
        raise ValueError(f"mixed day lengths {sorted(lengths)}")
    return np.stack([s.as_array() for s in states])


def array_to_states(arr: np.ndarray) -> list[MarketStateDay]:
    return [MarketStateDay.from_array(day) for day in np.asarray(arr, dtype=np.float64)]
