"""State extraction, indicators, scaling and binning."""
import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from marketgen.marketstate import (
    IndicatorBinner,
    MarketStateDay,
    StateNormalizer,
    compute_indicators,
    extract_market_states,
    indicators_from_states,
    load_corpus,
    parse_tick_line,
    rebuild_prices,
    save_corpus,
    states_to_array,
)


# ---------------------------------------------------------------------------
# MarketStateDay
# ---------------------------------------------------------------------------

def test_state_day_validation():
    day = MarketStateDay(returns=np.zeros(5), arrival_rates=np.ones(5))
    assert day.minutes == 5
    with pytest.raises(ValueError):
        MarketStateDay(returns=np.zeros(5), arrival_rates=np.ones(4))
    with pytest.raises(ValueError):
        MarketStateDay(returns=np.array([np.nan]), arrival_rates=np.ones(1))
    with pytest.raises(ValueError):
        MarketStateDay(returns=np.zeros(3), arrival_rates=np.array([1.0, -1.0, 0.0])).validate_raw()


def test_state_array_roundtrip():
    day = MarketStateDay(returns=np.array([0.1, -0.2]), arrival_rates=np.array([3.0, 4.0]))
    back = MarketStateDay.from_array(day.as_array())
    np.testing.assert_array_equal(back.returns, day.returns)
    np.testing.assert_array_equal(back.arrival_rates, day.arrival_rates)


# ---------------------------------------------------------------------------
# Indicators
# ---------------------------------------------------------------------------

def test_indicators_constant_prices():
    ind = compute_indicators([10.0] * 6)
    assert (ind.daily_return, ind.amplitude, ind.volatility) == (0.0, 0.0, 0.0)


def test_indicators_hand_case():
    ind = compute_indicators([10.0, 10.2, 9.9, 10.1])
    assert ind.daily_return == pytest.approx(0.009950330853168092, abs=1e-15)
    assert ind.amplitude == pytest.approx(0.03, abs=1e-12)
    assert ind.volatility == pytest.approx(0.02345468750114924, abs=1e-15)


def test_indicators_monotone_series_amplitude():
    prices = [10.0, 10.1, 10.25, 10.4]
    ind = compute_indicators(prices)
    assert ind.amplitude == pytest.approx((prices[-1] - prices[0]) / prices[0], abs=1e-12)


def test_indicators_reject_bad_prices():
    with pytest.raises(ValueError):
        compute_indicators([10.0, -1.0, 10.0])
    with pytest.raises(ValueError):
        compute_indicators([10.0])


def test_daily_return_equals_sum_of_state_returns():
    rng = np.random.default_rng(0)
    returns = rng.normal(0, 0.01, 50)
    day = MarketStateDay(returns=returns, arrival_rates=np.ones(50))
    ind = indicators_from_states(day)
    assert ind.daily_return == pytest.approx(returns.sum(), abs=1e-9)
    prices = rebuild_prices(returns, open_price=10.0)
    assert prices.shape == (51,)
    assert compute_indicators(prices).daily_return == pytest.approx(returns.sum(), abs=1e-9)


# ---------------------------------------------------------------------------
# Extraction via book reconstruction
# ---------------------------------------------------------------------------

def quote_pair(t, bid, ask, qty=5):
    return [
        {"t": t, "p": bid, "q": qty, "o": "buy_limit"},
        {"t": t + 0.5, "p": ask, "q": qty, "o": "sell_limit"},
    ]


def test_extract_constant_mid_counts_orders():
    records = []
    records += quote_pair(1.0, 9.99, 10.01)          # minute 0: two orders, mid 10
    records += quote_pair(61.0, 9.99, 10.01)         # minute 1
    records.append({"t": 62.0, "p": 9.98, "q": 1, "o": "buy_limit"})
    state = extract_market_states(records, minutes=3)
    np.testing.assert_allclose(state.returns, [0.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_array_equal(state.arrival_rates, [2.0, 3.0, 0.0])


def test_extract_mid_move_matches_log_diff():
    records = quote_pair(1.0, 9.99, 10.01)           # p0 = 10.0
    records += [
        {"t": 63.0, "p": 9.99, "q": 5, "o": "cancel"},
        {"t": 64.0, "p": 10.01, "q": 5, "o": "cancel"},
    ]
    records += quote_pair(65.0, 10.09, 10.11)        # minute 1 close mid 10.10
    state = extract_market_states(records, minutes=3)
    # bucket 0 closes at 10.0 (return 0), bucket 1 at 10.1, bucket 2 carries.
    np.testing.assert_allclose(
        state.returns, [0.0, 0.009950330853168092, 0.0], atol=1e-12)
    np.testing.assert_array_equal(state.arrival_rates, [2.0, 4.0, 0.0])


def test_extract_empty_minute_carries_forward():
    records = quote_pair(1.0, 9.99, 10.01)
    records += quote_pair(121.0, 10.01, 10.03)       # nothing in minute 1
    state = extract_market_states(records, minutes=3)
    assert state.arrival_rates[1] == 0.0
    assert state.returns[1] == 0.0


def test_extract_rejects_bad_input():
    with pytest.raises(ValueError):
        extract_market_states([{"t": 1.0, "p": -5.0, "q": 1, "o": "buy_limit"}], minutes=2)
    with pytest.raises(ValueError):  # no two-sided quote in the opening minute
        extract_market_states([{"t": 1.0, "p": 10.0, "q": 1, "o": "buy_limit"}], minutes=2)
    records = quote_pair(1.0, 9.99, 10.01) + [{"t": 0.5, "p": 10.0, "q": 1, "o": "buy_limit"}]
    with pytest.raises(ValueError):  # out of order timestamps
        extract_market_states(records, minutes=2)


def test_parse_tick_line_accepts_both_side_encodings():
    rec = parse_tick_line('{"t": 3.5, "p": 10.0, "q": 2, "o": "buy_limit"}')
    assert rec["o"] == "buy_limit"
    rec = parse_tick_line('{"t": 3.5, "p": 10.0, "q": 2, "o": 0}')
    assert rec["o"] == "sell_limit"
    with pytest.raises(ValueError):
        parse_tick_line('{"t": 3.5, "p": 10.0, "q": 2, "o": "market"}')
    with pytest.raises(ValueError):
        parse_tick_line('{"t": 3.5, "p": 0.0, "q": 2, "o": "buy_limit"}')


# ---------------------------------------------------------------------------
# Normalizer
# ---------------------------------------------------------------------------

def test_normalizer_hand_case():
    X = np.zeros((2, 2, 1))
    X[0, 0, 0], X[1, 0, 0] = 0.0, 2.0    # returns channel holds {0, 2}
    X[:, 1, 0] = 7.0                      # constant arrival channel
    norm = StateNormalizer().fit(X)
    np.testing.assert_allclose(norm.mean_, [1.0, 7.0])
    np.testing.assert_allclose(norm.std_, [1.0, 1e-8])
    Z = norm.transform(X)
    assert Z[0, 0, 0] == pytest.approx(-1.0)
    np.testing.assert_allclose(Z[:, 1, 0], 0.0)     # constant channel maps to 0


def test_normalizer_roundtrip_random():
    rng = np.random.default_rng(1)
    X = rng.normal(3.0, 2.5, (6, 2, 13))
    norm = StateNormalizer().fit(X)
    np.testing.assert_allclose(norm.inverse_transform(norm.transform(X)), X, atol=1e-9)


def test_normalizer_serialisation_and_fit_check():
    rng = np.random.default_rng(2)
    X = rng.normal(0, 1, (4, 2, 7))
    norm = StateNormalizer().fit(X)
    clone = StateNormalizer.from_dict(norm.to_dict())
    np.testing.assert_allclose(clone.transform(X), norm.transform(X))
    with pytest.raises(NotFittedError):
        StateNormalizer().transform(X)


# ---------------------------------------------------------------------------
# Indicator bins
# ---------------------------------------------------------------------------

def test_binner_percentile_edges_and_labels():
    binner = IndicatorBinner().fit(np.arange(21.0))
    np.testing.assert_allclose(binner.edges_, [4.0, 8.0, 12.0, 16.0])
    assert binner.classify(-3.0) == 0            # below the 20th percentile
    assert binner.classify(20.5) == 4            # above the 80th percentile
    assert binner.classify(4.0) == 1             # edge value goes to the upper bin
    for k in range(5):
        lo = -np.inf if k == 0 else binner.edges_[k - 1]
        hi = np.inf if k == 4 else binner.edges_[k]
        assert lo <= binner.medians_[k] < hi


def test_binner_is_monotone():
    rng = np.random.default_rng(3)
    values = rng.normal(0, 1, 300)
    binner = IndicatorBinner().fit(values)
    probes = np.sort(rng.normal(0, 2, 100))
    labels = binner.transform(probes)
    assert np.all(np.diff(labels) >= 0)
    assert set(np.unique(binner.transform(values))) == {0, 1, 2, 3, 4}


def test_binner_rejects_degenerate_values():
    with pytest.raises(ValueError):
        IndicatorBinner().fit(np.array([1.0, 1.0, 1.0, 2.0, 3.0, 4.0]))
    with pytest.raises(ValueError):
        IndicatorBinner().fit(np.ones(10))


def test_binner_serialisation():
    binner = IndicatorBinner().fit(np.arange(50.0))
    clone = IndicatorBinner.from_dict(binner.to_dict())
    np.testing.assert_array_equal(clone.transform([3.0, 25.0, 49.0]),
                                  binner.transform([3.0, 25.0, 49.0]))


# ---------------------------------------------------------------------------
# Corpus file format
# ---------------------------------------------------------------------------

def test_corpus_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    states = [
        MarketStateDay(returns=rng.normal(0, 0.01, 6),
                       arrival_rates=rng.integers(0, 50, 6).astype(float))
        for _ in range(3)
    ]
    path = tmp_path / "corpus.csv"
    save_corpus(path, states)
    loaded = load_corpus(path)
    assert len(loaded) == 3
    for a, b in zip(states, loaded):
        np.testing.assert_array_equal(a.returns, b.returns)
        np.testing.assert_array_equal(a.arrival_rates, b.arrival_rates)
    arr = states_to_array(loaded)
    assert arr.shape == (3, 2, 6)


def test_corpus_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("nope\n1,2,3,4\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_corpus(path)
