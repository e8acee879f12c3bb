"""Actor construction, demand math, the price solver and full-day generation."""
import math

import numpy as np
import pytest

from marketgen.exchange import BUY, SELL, MarketObservation
from marketgen.marketstate import MarketStateDay
from marketgen.metaagent import (
    ActorState,
    MetaAgentParams,
    demand,
    estimate_return,
    generate_day,
    load_price_path,
    make_order,
    solve_lowest_price,
    spawn_actor,
    wake_interval,
    write_order_flow,
    write_price_path,
)


def residual(p, position, cash, target, aversion, vol):
    """The solver's defining equation, restated independently."""
    u = math.log(target / p) / (aversion * vol * p)
    return p * (u - position) - cash


# ---------------------------------------------------------------------------
# Parameters and actor sampling
# ---------------------------------------------------------------------------

def test_params_validation():
    MetaAgentParams()  # defaults valid
    with pytest.raises(ValueError):
        MetaAgentParams(risk_aversion_base=-1.0)
    with pytest.raises(ValueError):
        MetaAgentParams(rate_floor=10.0, rate_cap=1.0)
    with pytest.raises(ValueError):
        MetaAgentParams(weight_law="cauchy")


def test_spawn_weight_means_match_configuration():
    rng = np.random.default_rng(0)
    params = MetaAgentParams()
    actors = [spawn_actor(rng, params) for _ in range(10_000)]
    wf = np.mean([a.w_fundamental for a in actors])
    wc = np.mean([a.w_chartist for a in actors])
    wn = np.mean([a.w_noise for a in actors])
    assert wf == pytest.approx(10.0, rel=0.05)
    assert wc == pytest.approx(1.5, rel=0.05)
    assert wn == pytest.approx(1.0, rel=0.05)
    assert wf > wc > wn
    assert all(a.w_fundamental > 0 and a.w_chartist > 0 and a.w_noise > 0
               for a in actors)
    assert all(a.position >= 0 and a.cash > 0 for a in actors)


def test_spawn_laplace_law_keeps_means_and_positivity():
    rng = np.random.default_rng(1)
    params = MetaAgentParams(weight_law="laplace")
    actors = [spawn_actor(rng, params) for _ in range(10_000)]
    assert np.mean([a.w_fundamental for a in actors]) == pytest.approx(10.0, rel=0.05)
    assert min(a.w_noise for a in actors) > 0


def test_equal_weights_give_base_traits():
    actor = ActorState(position=10, cash=100.0, w_fundamental=2.0, w_chartist=2.0,
                       w_noise=1.0, horizon=30.0, risk_aversion=0.1)
    params = MetaAgentParams()
    ratio = (1 + actor.w_fundamental) / (1 + actor.w_chartist)
    assert ratio == 1.0
    assert params.horizon_base * ratio == params.horizon_base


def test_wake_interval_statistics_and_clamping():
    rng = np.random.default_rng(2)
    params = MetaAgentParams()
    draws = np.array([wake_interval(50.0, rng, params) for _ in range(100_000)])
    assert draws.mean() == pytest.approx(1.0 / 50.0, rel=0.02)
    assert np.all(draws > 0)
    slow = [wake_interval(-3.0, rng, params) for _ in range(200)]
    assert np.mean(slow) > 100.0  # clamped to the 1e-3 floor: huge intervals


# ---------------------------------------------------------------------------
# Return estimate and demand
# ---------------------------------------------------------------------------

def test_estimate_return_weighted_mean():
    rng = np.random.default_rng(3)
    actor = ActorState(position=0, cash=1.0, w_fundamental=1.0, w_chartist=1.0,
                       w_noise=1.0, horizon=30.0, risk_aversion=0.1)
    est = estimate_return(actor, 0.01, 0.02, rng, noise_std=0.0)
    assert est == pytest.approx(0.01, abs=1e-15)
    pure = ActorState(position=0, cash=1.0, w_fundamental=5.0, w_chartist=0.0 + 1e-12,
                      w_noise=1e-12, horizon=30.0, risk_aversion=0.1)
    assert estimate_return(pure, 0.03, -0.5, rng, 0.0) == pytest.approx(0.03, abs=1e-9)


def test_estimate_return_stays_in_convex_hull():
    rng = np.random.default_rng(4)
    params = MetaAgentParams()
    for _ in range(500):
        actor = spawn_actor(rng, params)
        fundamental = rng.normal(0, 0.01)
        chartist = rng.normal(0, 0.01)
        state = rng.bit_generator.state
        est = estimate_return(actor, fundamental, chartist, rng, params.noise_return_std)
        rng.bit_generator.state = state
        noise = rng.normal(0.0, params.noise_return_std)
        lo = min(fundamental, chartist, noise) - 1e-15
        hi = max(fundamental, chartist, noise) + 1e-15
        assert lo <= est <= hi


def test_demand_values():
    assert demand(10.0, 10.0, 0.1, 0.01) == 0.0
    assert demand(10.0, 10.5, 0.1, 0.01) == pytest.approx(4.879016416943204, abs=1e-12)
    with pytest.raises(ValueError):
        demand(-1.0, 10.0, 0.1, 0.01)
    with pytest.raises(ValueError):
        demand(10.0, 10.0, 0.1, 0.0)


def test_demand_strictly_decreasing_in_price():
    target = 10.0
    grid = np.linspace(0.5, target, 200)
    values = [demand(p, target, 0.2, 0.005) for p in grid]
    assert np.all(np.diff(values) < 0)


# ---------------------------------------------------------------------------
# Lowest-price solver
# ---------------------------------------------------------------------------

def test_solver_closed_form_no_position():
    # With no holdings the equation reduces to ln(target/p) = cash * a * V.
    p = solve_lowest_price(position=0, cash=10.0, target_price=10.0,
                           risk_aversion=0.1, volatility=0.01)
    assert p == pytest.approx(10.0 * math.exp(-0.01), abs=1e-9)


def test_solver_approaches_target_as_cash_vanishes():
    p = solve_lowest_price(position=0, cash=1e-9, target_price=10.0,
                           risk_aversion=0.1, volatility=0.01)
    assert p == pytest.approx(10.0, abs=1e-6)


def test_solver_residual_randomized():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(2000):
        position = float(rng.integers(0, 500))
        cash = rng.uniform(1.0, 5000.0)
        target = rng.uniform(1.0, 50.0)
        aversion = rng.uniform(0.005, 2.0)
        vol = rng.uniform(1e-4, 0.05)
        p = solve_lowest_price(position, cash, target, aversion, vol)
        assert p is not None and 0 < p < target
        worst = max(worst, abs(residual(p, position, cash, target, aversion, vol)))
    assert worst < 1e-6


# ---------------------------------------------------------------------------
# Order composition
# ---------------------------------------------------------------------------

class ScriptRng:
    """Plays back fixed normal/uniform draws for a hand-walked wake-up."""

    def __init__(self, normal_value, uniform_fraction):
        self.normal_value = normal_value
        self.uniform_fraction = uniform_fraction

    def normal(self, loc, scale):
        return self.normal_value

    def uniform(self, lo, hi):
        return lo + self.uniform_fraction * (hi - lo)


def hand_obs(price=10.0, mean_return=0.01, volatility=0.01):
    return MarketObservation(price=price, mid=price, mean_return=mean_return,
                             volatility=volatility, oir=0.0)


def test_make_order_hand_walk():
    params = MetaAgentParams()
    actor = ActorState(position=10, cash=1000.0, w_fundamental=2.0, w_chartist=1.0,
                       w_noise=1.0, horizon=30.0, risk_aversion=0.2)
    obs = hand_obs()
    rng = ScriptRng(normal_value=0.0, uniform_fraction=0.5)
    order = make_order(actor, obs, fundamental=0.02, rng=rng, params=params,
                       t_seconds=90.0, tick=0.01)
    # Independent recomputation of every quantity in the walk; the demand
    # curve sees the capped-std variance.
    r_hat = (2.0 * 0.02 + 1.0 * 0.01 + 0.0) / 4.0
    target = 10.0 * math.exp(r_hat)
    var = min(0.01, params.demand_vol_cap) ** 2
    lowest = solve_lowest_price(10, 1000.0, target, 0.2, var)
    price = lowest + 0.5 * (target - lowest)
    units = demand(price, target, 0.2, var)
    imbalance = units - 10
    assert order is not None
    assert order.t == 90.0
    assert order.side == (BUY if imbalance > 0 else SELL)
    assert order.qty == int(abs(imbalance) + 0.5)
    assert order.price == pytest.approx(round(round(price / 0.01) * 0.01, 12), abs=1e-12)
    assert lowest - 0.01 <= order.price <= target + 0.01


def test_make_order_sign_rule_and_sell_cap():
    params = MetaAgentParams()
    obs = hand_obs()
    rng = ScriptRng(0.0, 0.05)   # price near the lowest: large demand -> buy
    rich = ActorState(position=0, cash=5000.0, w_fundamental=1.0, w_chartist=1.0,
                      w_noise=1.0, horizon=30.0, risk_aversion=0.1)
    order = make_order(rich, obs, 0.02, rng, params, 60.0, 0.01)
    assert order is not None and order.side == BUY

    loaded = ActorState(position=3, cash=1.0, w_fundamental=1.0, w_chartist=1.0,
                        w_noise=1.0, horizon=30.0, risk_aversion=0.1)
    rng = ScriptRng(0.0, 0.999)  # price near the target: demand ~ 0 -> sell
    order = make_order(loaded, obs, -0.01, rng, params, 60.0, 0.01)
    assert order is not None and order.side == SELL
    assert order.qty <= loaded.position


# ---------------------------------------------------------------------------
# Full-day generation
# ---------------------------------------------------------------------------

def flat_states(minutes, rate, ret=0.0):
    return MarketStateDay(returns=np.full(minutes, ret),
                          arrival_rates=np.full(minutes, float(rate)))


def test_generate_day_determinism():
    states = flat_states(10, 40.0, ret=0.001)
    a = generate_day(states, seed=7)
    b = generate_day(states, seed=7)
    assert [(o.t, o.price, o.qty, o.side) for o in a.orders] == \
           [(o.t, o.price, o.qty, o.side) for o in b.orders]
    np.testing.assert_array_equal(a.minute_prices, b.minute_prices)
    c = generate_day(states, seed=8)
    assert [(o.t, o.price) for o in a.orders] != [(o.t, o.price) for o in c.orders]


def test_generate_day_zero_rate_near_empty():
    states = flat_states(10, 0.0)   # clamped to the 1e-3 floor
    run = generate_day(states, seed=1)
    assert len(run.orders) <= 2
    assert run.minute_prices.shape == (11,)


def test_generate_day_order_count_tracks_rate():
    states = flat_states(30, 50.0)
    counts = [len(generate_day(states, seed=s).orders) for s in range(3)]
    assert np.mean(counts) == pytest.approx(30 * 50.0, rel=0.1)


def test_generate_day_timestamps_and_prices():
    states = flat_states(15, 30.0, ret=0.0005)
    run = generate_day(states, seed=3)
    ts = [o.t for o in run.orders]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    assert ts[-1] <= 15 * 60.0
    assert run.minute_prices[0] == run.params.seed_price
    assert np.all(run.minute_prices > 0)
    assert run.minute_oir.shape == (15,)
    with pytest.raises(RuntimeError):
        run.run()  # single use


def test_directional_coupling_positive_drift():
    # Strongly positive fundamental path: most runs end the day up.
    states = flat_states(60, 40.0, ret=0.002)   # +12% cumulative
    ups = 0
    for seed in range(50):
        run = generate_day(states, seed=seed)
        prices = run.minute_prices
        ups += prices[-1] > prices[0]
    assert ups >= 40


def test_flow_and_price_files_roundtrip(tmp_path):
    states = flat_states(8, 30.0, ret=0.001)
    run = generate_day(states, seed=11)
    flow_path = tmp_path / "flow.jsonl"
    price_path = tmp_path / "prices.csv"
    write_order_flow(flow_path, run.orders)
    write_price_path(price_path, run.minute_prices, run.minute_oir)
    lines = flow_path.read_text().strip().splitlines()
    assert len(lines) == len(run.orders)
    import json
    rec = json.loads(lines[0])
    assert set(rec) == {"t", "p", "q", "o"}
    prices, oir = load_price_path(price_path)
    np.testing.assert_allclose(prices, run.minute_prices)
    np.testing.assert_allclose(oir, run.minute_oir)
