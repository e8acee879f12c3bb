"""The order generator: one world agent spawning a fresh actor per wake-up.

Wake-up times follow an exponential clock whose rate is the state day's
arrival-rate channel; each actor blends a fundamental signal (the state day's
return channel), a chartist signal (the exchange's trailing mean return) and
Gaussian noise into a return forecast, derives its demand curve from CARA
utility, and submits one limit order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .exchange import BUY, SELL, Exchange, MarketObservation, Order
from .marketstate import MarketStateDay

_MIN_WAKE_MINUTES = 1e-9  # keeps emitted timestamps strictly increasing


@dataclass(frozen=True)
class MetaAgentParams:
    """Fixed parameter set shared by every spawned actor."""

    fundamental_weight_mean: float = 10.0
    chartist_weight_mean: float = 1.5
    noise_weight_mean: float = 1.0
    horizon_base: float = 30.0          # estimation lookback, minutes
    risk_aversion_base: float = 0.1
    noise_return_std: float = 1e-4
    seed_price: float = 10.0
    position_mean: float = 100.0
    cash_mean: float = 1000.0
    rate_floor: float = 1e-3
    rate_cap: float = 5000.0
    demand_vol_cap: float = 5e-4        # cap on the std fed to the demand curve
    weight_law: str = "exponential"     # or "laplace" (folded, same means)

    def __post_init__(self):
        numeric = {k: v for k, v in vars(self).items() if k != "weight_law"}
        for name, value in numeric.items():
            if not (isinstance(value, (int, float)) and value > 0):
                raise ValueError(f"{name} must be positive, got {value!r}")
        if self.rate_floor > self.rate_cap:
            raise ValueError("rate floor exceeds rate cap")
        if self.weight_law not in ("exponential", "laplace"):
            raise ValueError(f"unknown weight law {self.weight_law!r}")

    def with_overrides(self, **kwargs) -> "MetaAgentParams":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class ActorState:
    """Per-wake-up actor: endowment, component weights, derived traits."""

    position: int
    cash: float
    w_fundamental: float
    w_chartist: float
    w_noise: float
    horizon: float
    risk_aversion: float


def _draw_weight(rng: np.random.Generator, mean: float, law: str) -> float:
    if law == "laplace":
        # Folded to positive support; E|Laplace(0, b)| = b keeps the means.
        return abs(rng.laplace(0.0, mean))
    return rng.exponential(mean)


def spawn_actor(rng: np.random.Generator, params: MetaAgentParams) -> ActorState:
    w_f = _draw_weight(rng, params.fundamental_weight_mean, params.weight_law)
    w_c = _draw_weight(rng, params.chartist_weight_mean, params.weight_law)
    w_n = _draw_weight(rng, params.noise_weight_mean, params.weight_law)
    ratio = (1.0 + w_f) / (1.0 + w_c)
    return ActorState(
        position=int(round(rng.exponential(params.position_mean))),
        cash=max(rng.exponential(params.cash_mean), 1e-12),
        w_fundamental=w_f,
        w_chartist=w_c,
        w_noise=w_n,
        horizon=params.horizon_base * ratio,
        risk_aversion=params.risk_aversion_base * ratio,
    )


def wake_interval(rate: float, rng: np.random.Generator,
                  params: MetaAgentParams) -> float:
    """Minutes until the next wake-up; the rate is clamped into its band."""
    clamped = min(max(rate, params.rate_floor), params.rate_cap)
    return max(rng.exponential(1.0 / clamped), _MIN_WAKE_MINUTES)


def estimate_return(actor: ActorState, fundamental: float, chartist: float,
                    rng: np.random.Generator, noise_std: float) -> float:
    """Weighted blend of the three component forecasts."""
    noise = rng.normal(0.0, noise_std)
    total = actor.w_fundamental + actor.w_chartist + actor.w_noise
    return (actor.w_fundamental * fundamental + actor.w_chartist * chartist
            + actor.w_noise * noise) / total


def demand(price: float, target_price: float, risk_aversion: float,
           volatility: float) -> float:
    """CARA demand ``ln(target/price) / (risk_aversion * volatility * price)``."""
    if min(price, target_price, risk_aversion, volatility) <= 0:
        raise ValueError("demand needs positive price, target, aversion, volatility")
    return math.log(target_price / price) / (risk_aversion * volatility * price)


def solve_lowest_price(position: float, cash: float, target_price: float,
                       risk_aversion: float, volatility: float,
                       tol: float = 1e-9, max_iter: int = 200) -> float | None:
    """Root of ``p * (u(p) - position) = cash`` on (0, target_price).

    The residual ``g(p) = ln(target/p)/(aV) - p*position - cash`` is strictly
    decreasing with ``g(0+) = +inf`` and ``g(target) < 0``, so the root exists
    and is unique. Bisection runs on ``y = ln p`` because the root can sit
    hundreds of orders of magnitude below the target. Returns None when the
    root underflows float range (the wake-up is then skipped).
    """
    if target_price <= 0 or cash <= 0 or position < 0:
        raise ValueError("need target_price > 0, cash > 0, position >= 0")
    av = risk_aversion * volatility
    log_target = math.log(target_price)

    def residual_log(y: float) -> float:
        return (log_target - y) / av - position * math.exp(y) - cash

    hi = log_target  # residual < 0 there
    step = 1.0
    lo = log_target - step
    while residual_log(lo) <= 0.0:
        step *= 2.0
        lo = log_target - step
        if lo < -750.0 and math.exp(lo) == 0.0:
            return None  # root below float range
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:  # bracket at float resolution
            break
        g = residual_log(mid)
        if abs(g) < tol:
            return math.exp(mid)
        if g > 0.0:
            lo = mid
        else:
            hi = mid
    price = math.exp(0.5 * (lo + hi))
    return price if price > 0.0 else None


def make_order(actor: ActorState, obs: MarketObservation, fundamental: float,
               rng: np.random.Generator, params: MetaAgentParams,
               t_seconds: float, tick: float) -> Order | None:
    """One actor decision; None when the wake-up produces no viable order.

    The demand curve sees the return variance (capped std, squared): CARA
    demand scales with variance, and an uncapped band lets volatility feed
    back into ever-deeper quotes until the market collapses.
    """
    r_hat = estimate_return(actor, fundamental, obs.mean_return, rng,
                            params.noise_return_std)
    target_price = obs.price * math.exp(r_hat)
    risk_input = min(obs.volatility, params.demand_vol_cap) ** 2
    lowest = solve_lowest_price(actor.position, actor.cash, target_price,
                                actor.risk_aversion, risk_input)
    if lowest is None or lowest >= target_price:
        return None
    price = rng.uniform(lowest, target_price)
    ticks = round(price / tick)
    if ticks < 1:
        return None
    units = demand(price, target_price, actor.risk_aversion, risk_input)
    imbalance = units - actor.position
    if abs(imbalance) < 0.5:
        return None
    side = BUY if imbalance > 0 else SELL
    qty = int(abs(imbalance) + 0.5)
    if side == SELL:
        qty = min(qty, actor.position)
        if qty == 0:
            return None
    return Order(t=t_seconds, price=round(ticks * tick, 12), qty=qty, side=side)


class GenerationRun:
    """One day of order generation against a fresh exchange.

    Deterministic in (states, params, seed): all randomness flows from the
    single generator seeded here.
    """

    def __init__(self, states: MarketStateDay, params: MetaAgentParams,
                 seed: int, tick: float = 0.01):
        # Raw diffusion output may carry negative arrival rates; the per-wake
        # clamp in wake_interval owns non-negativity.
        self.states = states
        self.params = params
        self.seed = seed
        self.tick = tick
        self.exchange = Exchange(seed_price=params.seed_price, tick=tick)
        self.orders: list[Order] = []
        self.clock = 0.0  # minutes
        self._ran = False

    def run(self) -> "GenerationRun":
        if self._ran:
            raise RuntimeError("a GenerationRun is single-use")
        self._ran = True
        ex = self.exchange
        params = self.params
        minutes = self.states.minutes
        returns = self.states.returns
        rates = self.states.arrival_rates
        rng = np.random.default_rng(self.seed)

        while True:
            current = int(self.clock)
            if current >= minutes:
                break
            delta = wake_interval(rates[current], rng, params)
            t_next = self.clock + delta
            if t_next > minutes:
                break
            while len(ex.minute_marks) < int(t_next):
                ex.minute_close()
            wake_minute = min(int(t_next), minutes - 1)
            actor = spawn_actor(rng, params)
            obs = ex.observe(max(1, int(round(actor.horizon))))
            order = make_order(actor, obs, returns[wake_minute], rng, params,
                               t_seconds=t_next * 60.0, tick=self.tick)
            if order is not None:
                ex.submit(order)
                self.orders.append(order)
            self.clock = t_next

        while len(ex.minute_marks) < minutes:
            ex.minute_close()
        return self

    @property
    def minute_prices(self) -> np.ndarray:
        """Open (seed) price followed by the T minute-end mids."""
        return np.concatenate([[self.params.seed_price], self.exchange.minute_marks])

    @property
    def minute_oir(self) -> np.ndarray:
        return np.asarray(self.exchange.minute_oir)


def generate_day(states: MarketStateDay, params: MetaAgentParams | None = None,
                 seed: int = 0, tick: float = 0.01) -> GenerationRun:
    """Run Phase 2 end to end and return the completed run."""
    return GenerationRun(states, params or MetaAgentParams(), seed, tick).run()


# ---------------------------------------------------------------------------
# Flow and price-path files
# ---------------------------------------------------------------------------

PRICE_HEADER = "minute,price,oir"


def write_order_flow(path: str | Path, orders: Sequence[Order]) -> None:
    """JSONL, one order per line; side encoded 1 = buy, 0 = sell."""
    lines = [json.dumps({"t": o.t, "p": o.price, "q": int(o.qty), "o": int(o.side)})
             for o in orders]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_price_path(path: str | Path, prices: np.ndarray, oir: np.ndarray) -> None:
    """CSV of the open price (minute 0) and per-minute closes with OIR."""
    lines = [PRICE_HEADER, f"0,{float(prices[0])!r},0.0"]
    for minute in range(1, len(prices)):
        lines.append(f"{minute},{float(prices[minute])!r},{float(oir[minute - 1])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_price_path(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (prices incl. open, per-minute OIR)."""
    rows = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not rows or rows[0].strip() != PRICE_HEADER:
        raise ValueError(f"{path}: expected header {PRICE_HEADER!r}")
    prices, oir = [], []
    for row in rows[1:]:
        minute, price, imbalance = row.split(",")
        prices.append(float(price))
        if int(minute) > 0:
            oir.append(float(imbalance))
    return np.asarray(prices), np.asarray(oir)
