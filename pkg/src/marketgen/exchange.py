"""Continuous double-auction limit-order-book exchange.

Price-time priority, maker-price execution, integer quantities on a fixed
price tick. One instance is single-threaded; independent instances can run
in parallel. Prices are held internally as integer tick counts so the
tick-multiple invariant is exact.
"""
from __future__ import annotations

import json
import math
from bisect import bisect_left, insort
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

BUY = 1
SELL = 0

DEFAULT_TICK = 0.01
DEFAULT_VOL_FLOOR = 1e-4


@dataclass
class Order:
    """Limit order: time (seconds from open), price, quantity, side flag."""

    t: float
    price: float
    qty: int
    side: int
    id: int | None = None

    def validate(self, tick: float) -> int:
        """Returns the price in ticks; raises on any invariant breach."""
        if self.side not in (BUY, SELL):
            raise ValueError(f"side must be {BUY} (buy) or {SELL} (sell)")
        if not isinstance(self.qty, (int, np.integer)) or self.qty < 1:
            raise ValueError(f"quantity must be a positive integer, got {self.qty!r}")
        if not math.isfinite(self.t) or self.t < 0:
            raise ValueError(f"bad timestamp {self.t!r}")
        if not math.isfinite(self.price) or self.price <= 0:
            raise ValueError(f"price must be positive, got {self.price!r}")
        ticks = round(self.price / tick)
        if ticks < 1 or abs(self.price - ticks * tick) > 1e-6 * tick:
            raise ValueError(f"price {self.price!r} is not a multiple of tick {tick}")
        return ticks


@dataclass(frozen=True)
class Trade:
    t: float
    price: float
    qty: int
    aggressor_side: int
    maker_id: int = -1
    taker_id: int = -1


@dataclass(frozen=True)
class MarketObservation:
    """What an actor sees when it wakes up."""

    price: float            # last trade price, or mid if nothing traded yet
    mid: float | None
    mean_return: float      # average minutely log return over the lookback
    volatility: float       # std of those returns, clamped to the floor
    oir: float              # (bid vol - ask vol) / (bid vol + ask vol) at best


@dataclass
class _Resting:
    order_id: int
    t: float
    qty: int


class _BookSide:
    """One side of the book: FIFO queues keyed by price tick."""

    def __init__(self, is_bid: bool):
        self.is_bid = is_bid
        self.levels: dict[int, deque[_Resting]] = {}
        self.prices: list[int] = []  # ascending

    def best(self) -> int | None:
        if not self.prices:
            return None
        return self.prices[-1] if self.is_bid else self.prices[0]

    def volume_at(self, ticks: int) -> int:
        level = self.levels.get(ticks)
        return sum(r.qty for r in level) if level else 0

    def add(self, ticks: int, resting: _Resting) -> None:
        level = self.levels.get(ticks)
        if level is None:
            self.levels[ticks] = deque([resting])
            insort(self.prices, ticks)
        else:
            level.append(resting)

    def remove_level_if_empty(self, ticks: int) -> None:
        if not self.levels[ticks]:
            del self.levels[ticks]
            idx = bisect_left(self.prices, ticks)
            self.prices.pop(idx)

    def total_qty(self) -> int:
        return sum(r.qty for level in self.levels.values() for r in level)


class Exchange:
    """Matching engine plus the market observables actors consume."""

    def __init__(self, seed_price: float | None = 10.0, tick: float = DEFAULT_TICK,
                 vol_floor: float = DEFAULT_VOL_FLOOR):
        if tick <= 0:
            raise ValueError("tick must be positive")
        self.tick = tick
        self.vol_floor = vol_floor
        self.seed_price = seed_price
        self.bids = _BookSide(is_bid=True)
        self.asks = _BookSide(is_bid=False)
        self.trades: list[Trade] = []
        self.minute_marks: list[float] = []
        self.minute_oir: list[float] = []
        self.last_trade_price: float | None = None
        self._locations: dict[int, tuple[int, int]] = {}  # id -> (side, ticks)
        self._next_id = 0
        self._last_submit_t = -math.inf
        # Rolling sums over minutely log returns keep observe() O(1); the
        # generator calls it at every actor wake-up.
        self._ret_count = 0
        self._ret_cum = [0.0]
        self._ret2_cum = [0.0]

    # -- prices ------------------------------------------------------------

    def price_of(self, ticks: int) -> float:
        """Canonical float for a tick count (kills 995*0.01 = 9.95000...1)."""
        return round(ticks * self.tick, 12)

    def best_bid(self) -> tuple[float, int] | None:
        ticks = self.bids.best()
        if ticks is None:
            return None
        return self.price_of(ticks), self.bids.volume_at(ticks)

    def best_ask(self) -> tuple[float, int] | None:
        ticks = self.asks.best()
        if ticks is None:
            return None
        return self.price_of(ticks), self.asks.volume_at(ticks)

    def mid_price(self) -> float | None:
        bid, ask = self.bids.best(), self.asks.best()
        if bid is None or ask is None:
            return None
        return (self.price_of(bid) + self.price_of(ask)) / 2.0

    def observation_price(self) -> float:
        """Last traded price, else mid, else last minute mark, else seed."""
        if self.last_trade_price is not None:
            return self.last_trade_price
        mid = self.mid_price()
        if mid is not None:
            return mid
        if self.minute_marks:
            return self.minute_marks[-1]
        if self.seed_price is None:
            raise ValueError("no price observable yet and no seed price configured")
        return self.seed_price

    # -- order entry ---------------------------------------------------------

    def submit(self, order: Order) -> list[Trade]:
        ticks = order.validate(self.tick)
        if order.t < self._last_submit_t:
            raise ValueError("order timestamps must be non-decreasing")
        self._last_submit_t = order.t
        if order.id is None:
            order.id = self._next_id
            self._next_id += 1
        elif order.id in self._locations:
            raise ValueError(f"duplicate order id {order.id}")
        self._next_id = max(self._next_id, order.id + 1)

        remaining = int(order.qty)
        trades: list[Trade] = []
        opposite = self.asks if order.side == BUY else self.bids

        def crosses(best: int) -> bool:
            return best <= ticks if order.side == BUY else best >= ticks

        while remaining > 0:
            best = opposite.best()
            if best is None or not crosses(best):
                break
            queue = opposite.levels[best]
            maker = queue[0]
            take = min(remaining, maker.qty)
            trade = Trade(t=order.t, price=self.price_of(best), qty=take,
                          aggressor_side=order.side, maker_id=maker.order_id,
                          taker_id=order.id)
            trades.append(trade)
            self.trades.append(trade)
            self.last_trade_price = trade.price
            maker.qty -= take
            remaining -= take
            if maker.qty == 0:
                queue.popleft()
                del self._locations[maker.order_id]
                opposite.remove_level_if_empty(best)

        if remaining > 0:
            side = self.bids if order.side == BUY else self.asks
            side.add(ticks, _Resting(order_id=order.id, t=order.t, qty=remaining))
            self._locations[order.id] = (order.side, ticks)
        return trades

    def cancel(self, order_id: int) -> bool:
        loc = self._locations.pop(order_id, None)
        if loc is None:
            return False
        side_flag, ticks = loc
        side = self.bids if side_flag == BUY else self.asks
        queue = side.levels[ticks]
        for i, resting in enumerate(queue):
            if resting.order_id == order_id:
                del queue[i]
                break
        side.remove_level_if_empty(ticks)
        return True

    def cancel_at_price(self, price: float, qty: int) -> int:
        """Cancel up to `qty` resting units at `price`, oldest first.

        Used by the tick-ingestion path where cancels carry no order id.
        Returns the quantity actually cancelled (0 if the level is empty).
        """
        ticks = round(price / self.tick)
        cancelled = 0
        for side in (self.bids, self.asks):
            queue = side.levels.get(ticks)
            while queue and cancelled < qty:
                head = queue[0]
                take = min(head.qty, qty - cancelled)
                head.qty -= take
                cancelled += take
                if head.qty == 0:
                    queue.popleft()
                    del self._locations[head.order_id]
            if queue is not None:
                side.remove_level_if_empty(ticks)
            if cancelled >= qty:
                break
        return cancelled

    # -- minutely bookkeeping ------------------------------------------------

    def minute_close(self) -> float:
        """Record the minute-end mid (carry-forward when one-sided)."""
        mid = self.mid_price()
        if mid is None:
            if self.minute_marks:
                mid = self.minute_marks[-1]
            elif self.seed_price is not None:
                mid = self.seed_price
            else:
                raise ValueError("cannot close a minute before any quote exists")
        prev = self.minute_marks[-1] if self.minute_marks else self.seed_price
        if prev is not None:
            r = math.log(mid) - math.log(prev)
            self._ret_count += 1
            self._ret_cum.append(self._ret_cum[-1] + r)
            self._ret2_cum.append(self._ret2_cum[-1] + r * r)
        self.minute_marks.append(mid)
        self.minute_oir.append(self.order_imbalance())
        return mid

    def order_imbalance(self) -> float:
        bid, ask = self.best_bid(), self.best_ask()
        if bid is None and ask is None:
            return 0.0
        if ask is None:
            return 1.0
        if bid is None:
            return -1.0
        vb, va = bid[1], ask[1]
        return (vb - va) / (vb + va)

    def minute_returns(self) -> np.ndarray:
        marks = self.minute_marks
        if self.seed_price is not None:
            marks = [self.seed_price] + marks
        if len(marks) < 2:
            return np.empty(0)
        return np.diff(np.log(np.asarray(marks)))

    def observe(self, lookback_minutes: int) -> MarketObservation:
        n = self._ret_count
        window = min(n, max(int(lookback_minutes), 0))
        if window >= 2:
            s = self._ret_cum[n] - self._ret_cum[n - window]
            s2 = self._ret2_cum[n] - self._ret2_cum[n - window]
            mean_return = s / window
            var = max(s2 / window - mean_return * mean_return, 0.0)
            volatility = max(math.sqrt(var), self.vol_floor)
        else:
            mean_return = 0.0
            volatility = self.vol_floor
        return MarketObservation(
            price=self.observation_price(),
            mid=self.mid_price(),
            mean_return=mean_return,
            volatility=volatility,
            oir=self.order_imbalance(),
        )

    # -- reporting -------------------------------------------------------------

    def book_snapshot(self, depth: int = 10) -> dict:
        bids = [[self.price_of(t), self.bids.volume_at(t)]
                for t in reversed(self.bids.prices[-depth:])]
        asks = [[self.price_of(t), self.asks.volume_at(t)]
                for t in self.asks.prices[:depth]]
        return {"bids": bids, "asks": asks}

    def write_book_snapshot(self, path: str | Path, depth: int = 10) -> None:
        Path(path).write_text(json.dumps(self.book_snapshot(depth), sort_keys=True),
                              encoding="utf-8")

    def resting_quantity(self) -> int:
        return self.bids.total_qty() + self.asks.total_qty()

    def is_crossed(self) -> bool:
        bid, ask = self.bids.best(), self.asks.best()
        return bid is not None and ask is not None and bid >= ask


TRADE_LOG_HEADER = "t,price,qty,aggressor_side"


def write_trade_log(path: str | Path, trades: Sequence[Trade]) -> None:
    lines = [TRADE_LOG_HEADER]
    for tr in trades:
        lines.append(f"{float(tr.t)!r},{float(tr.price)!r},{tr.qty},{tr.aggressor_side}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
