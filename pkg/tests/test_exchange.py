import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intraday_rl.exchange import LimitOrder, close_at_market, execute

from conftest import make_lob, random_lob


def brute_force_match(order, lob, backstop=False):
    """Fill one contract at a time from a fully expanded book."""
    if order.signed_qty > 0:
        book = [p for p, q in zip(lob.ask_prices, lob.ask_qtys) for _ in range(int(q))]
        ok = lambda p: p <= order.target_price
    else:
        book = [p for p, q in zip(lob.bid_prices, lob.bid_qtys) for _ in range(int(q))]
        ok = lambda p: p >= order.target_price
    prices = []
    for p in book:
        if len(prices) == abs(order.signed_qty) or not ok(p):
            break
        prices.append(p)
    if backstop:
        last = book[-1] if book else (lob.bid_prices[-1] if order.signed_qty < 0
                                      else lob.ask_prices[-1])
        prices += [last] * (abs(order.signed_qty) - len(prices))
    n = len(prices)
    sign = 1 if order.signed_qty > 0 else -1
    return sign * n, (sum(prices) / n if n else 0.0)


def test_multi_level_buy():
    lob = make_lob([(99.9, 5)], [(100.0, 3), (100.5, 5)])
    fill = execute(LimitOrder(100.5, 6), lob)
    assert fill.filled_qty == 6
    assert fill.vwap == pytest.approx(100.25, rel=1e-12)
    assert fill.levels_consumed == 2
    assert brute_force_match(LimitOrder(100.5, 6), lob) == (6, pytest.approx(100.25))


def test_uncrossable_buy():
    lob = make_lob([(99.9, 5)], [(100.0, 3), (100.5, 5)])
    fill = execute(LimitOrder(99.9, 10), lob)
    assert (fill.filled_qty, fill.vwap) == (0, 0.0)


def test_single_level_fill():
    lob = make_lob([(99.9, 5)], [(100.0, 3), (100.5, 5)])
    fill = execute(LimitOrder(100.0, 2), lob)
    assert (fill.filled_qty, fill.vwap, fill.levels_consumed) == (2, 100.0, 1)


def test_sell_side():
    lob = make_lob([(99.9, 2), (99.8, 4)], [(100.0, 3)])
    fill = execute(LimitOrder(99.8, -5), lob)
    assert fill.filled_qty == -5
    assert fill.vwap == pytest.approx((2 * 99.9 + 3 * 99.8) / 5)


def test_zero_order():
    lob = make_lob([(99.9, 2)], [(100.0, 3)])
    assert execute(LimitOrder(0.0, 0), lob).filled_qty == 0


def test_close_at_market_examples():
    lob = make_lob([(99.9, 10), (99.8, 5)], [(100.0, 3)])
    assert close_at_market(0, lob).filled_qty == 0
    f = close_at_market(4, lob)
    assert (f.filled_qty, f.vwap) == (-4, 99.9)

    thin = make_lob([(99.9, 5), (99.8, 2)], [(100.0, 3)])
    f = close_at_market(8, thin)
    assert f.filled_qty == -8
    assert f.vwap == pytest.approx(99.8625, rel=1e-12)


def test_close_short_position_uses_asks():
    lob = make_lob([(99.9, 10)], [(100.0, 1), (100.1, 1)])
    f = close_at_market(-3, lob)
    assert f.filled_qty == 3
    assert f.vwap == pytest.approx((100.0 + 100.1 + 100.1) / 3)


def test_oracle_equivalence_random(rng):
    for _ in range(1000):
        lob = random_lob(rng)
        qty = int(rng.integers(-25, 26))
        price = 100.0 + float(rng.integers(-12, 13)) * 0.1
        order = LimitOrder(price, qty)
        fill = execute(order, lob)
        if qty == 0:
            assert fill.filled_qty == 0
            continue
        q, vwap = brute_force_match(order, lob)
        assert fill.filled_qty == q
        assert fill.vwap == pytest.approx(vwap, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), qty=st.integers(1, 40),
       lo=st.integers(-10, 10), bump=st.integers(0, 10))
def test_buy_fill_monotone_in_limit(seed, qty, lo, bump):
    lob = random_lob(np.random.default_rng(seed))
    low = execute(LimitOrder(100.0 + 0.1 * lo, qty), lob)
    high = execute(LimitOrder(100.0 + 0.1 * (lo + bump), qty), lob)
    assert high.filled_qty >= low.filled_qty
    if low.filled_qty:
        assert lob.ask_prices[0] <= low.vwap <= 100.0 + 0.1 * lo + 1e-12


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), pos=st.integers(-80, 80))
def test_close_at_market_always_flat(seed, pos):
    lob = random_lob(np.random.default_rng(seed))
    fill = close_at_market(pos, lob)
    assert fill.filled_qty == -pos
    if pos:
        q, vwap = brute_force_match(LimitOrder(1e-9 if pos > 0 else 1e9, -pos), lob,
                                    backstop=True)
        assert q == -pos
        assert fill.vwap == pytest.approx(vwap, rel=1e-9)
