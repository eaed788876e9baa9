import numpy as np
import pytest

from intraday_rl.marketdata import GeneratorSpec, LobSnapshot, generate_synthetic


def make_lob(bids, asks):
    """Build a snapshot from [(price, qty), ...] lists; missing levels are
    padded with empty levels one tick further out."""
    bids, asks = list(bids), list(asks)
    while len(bids) < 5:
        bids.append((round(bids[-1][0] - 0.1, 10), 0.0))
    while len(asks) < 5:
        asks.append((round(asks[-1][0] + 0.1, 10), 0.0))
    return LobSnapshot(
        tuple(float(p) for p, _ in bids), tuple(float(q) for _, q in bids),
        tuple(float(p) for p, _ in asks), tuple(float(q) for _, q in asks),
    )


def random_lob(rng, mid=100.0, tick=0.1, max_qty=8):
    offs = np.cumsum(rng.integers(1, 3, 5)) * tick
    bids = [(mid - o, float(rng.integers(0, max_qty + 1))) for o in offs]
    offs = np.cumsum(rng.integers(1, 3, 5)) * tick
    asks = [(mid + o, float(rng.integers(0, max_qty + 1))) for o in offs]
    return make_lob(bids, asks)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def noisy_days():
    spec = GeneratorSpec(n_days=3, minutes_per_day=60, volatility=0.002,
                         pattern="sine", amplitude=0.01)
    return generate_synthetic(spec, 3)


@pytest.fixture(scope="session")
def flat_days():
    return generate_synthetic(GeneratorSpec(n_days=2, minutes_per_day=45), 0)


def day_from_closes(closes, tick=0.2, depth=100.0, date="2021-01-04"):
    """A trading day whose closes are ``closes`` with a deep symmetric book."""
    from datetime import datetime, timedelta
    from intraday_rl.marketdata import Bar, MinuteRecord, TradingDay
    start = datetime.fromisoformat(f"{date}T09:30")
    recs = []
    for i, c in enumerate(closes):
        c = float(c)
        bar = Bar(start + timedelta(minutes=i), c, c + tick, c - tick, c, c, 100.0)
        offs = [(j + 0.5) * tick for j in range(5)]
        lob = LobSnapshot(tuple(c - o for o in offs), (depth,) * 5,
                          tuple(c + o for o in offs), (depth,) * 5)
        recs.append(MinuteRecord(bar, lob))
    return TradingDay(date, tuple(recs))


# acceptance criteria report: criterion number -> (passed, detail)
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
