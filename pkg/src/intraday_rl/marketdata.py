"""Minute-level market data: bars, 5-level order book snapshots, CSV I/O,
macro indicators, LOB normalization and a seeded synthetic generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

N_LEVELS = 5
MA_WINDOWS = (5, 10, 15, 20, 25, 30)
WARMUP = max(MA_WINDOWS) - 1
N_INDICATORS = 5 + len(MA_WINDOWS)

BAR_FIELDS = ("open", "high", "low", "close", "adj_close", "volume")
LOB_FIELDS = tuple(
    f"{name}_{i}"
    for i in range(1, N_LEVELS + 1)
    for name in ("bid_price", "bid_qty", "ask_price", "ask_qty")
)
CSV_HEADER = ("timestamp",) + BAR_FIELDS + LOB_FIELDS
INDICATOR_NAMES = (
    "z_open", "z_high", "z_low", "z_close", "z_adj_close",
) + tuple(f"z_d_{w}" for w in MA_WINDOWS)


class DataError(ValueError):
    """Raised for malformed or invariant-violating market data."""


@dataclass(frozen=True)
class Bar:
    timestamp: datetime
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: float

    def validate(self) -> None:
        prices = (self.open, self.high, self.low, self.close, self.adj_close)
        if not all(math.isfinite(p) and p > 0 for p in prices):
            raise DataError("bar prices must be finite and positive")
        if not (self.low <= min(self.open, self.close)
                and max(self.open, self.close) <= self.high):
            raise DataError("bar violates low <= open/close <= high")
        if not (math.isfinite(self.volume) and self.volume >= 0):
            raise DataError("bar volume must be non-negative")


@dataclass(frozen=True)
class LobSnapshot:
    """Five price levels per side; index 0 is the best level."""

    bid_prices: tuple
    bid_qtys: tuple
    ask_prices: tuple
    ask_qtys: tuple

    def validate(self) -> None:
        for seq in (self.bid_prices, self.bid_qtys, self.ask_prices, self.ask_qtys):
            if len(seq) != N_LEVELS:
                raise DataError(f"LOB needs exactly {N_LEVELS} levels")
            if not all(math.isfinite(v) for v in seq):
                raise DataError("LOB values must be finite")
        if not self.bid_prices[0] < self.ask_prices[0]:
            raise DataError("LOB is crossed: bid_price_1 >= ask_price_1")
        if any(p <= 0 for p in self.bid_prices + self.ask_prices):
            raise DataError("LOB prices must be positive")
        if any(b <= a for b, a in zip(self.bid_prices, self.bid_prices[1:])):
            raise DataError("bid prices must strictly decrease with depth")
        if any(b >= a for b, a in zip(self.ask_prices, self.ask_prices[1:])):
            raise DataError("ask prices must strictly increase with depth")
        if any(q < 0 for q in self.bid_qtys + self.ask_qtys):
            raise DataError("LOB quantities must be non-negative")

    def as_vector(self) -> np.ndarray:
        """Raw 20-vector in (bid_p, ask_p, bid_q, ask_q) per-level order."""
        out = np.empty(4 * N_LEVELS)
        out[0::4] = self.bid_prices
        out[1::4] = self.ask_prices
        out[2::4] = self.bid_qtys
        out[3::4] = self.ask_qtys
        return out


@dataclass(frozen=True)
class MinuteRecord:
    bar: Bar
    lob: LobSnapshot

    @property
    def timestamp(self) -> datetime:
        return self.bar.timestamp


@dataclass(frozen=True)
class TradingDay:
    date: str
    records: tuple
    _closes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.records) < 2:
            raise DataError(f"trading day {self.date} needs at least 2 records")
        ts = [r.timestamp for r in self.records]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DataError(f"timestamps not strictly increasing on {self.date}")
        closes = np.array([r.bar.close for r in self.records], dtype=float)
        closes.setflags(write=False)
        object.__setattr__(self, "_closes", closes)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def closes(self) -> np.ndarray:
        return self._closes

    def bar_matrix(self) -> np.ndarray:
        """(n, 6) array of open, high, low, close, adj_close, volume."""
        return np.array([[getattr(r.bar, f) for f in BAR_FIELDS] for r in self.records])


# ---------------------------------------------------------------------------
# CSV I/O


def _parse_float(text: str) -> Optional[float]:
    text = text.strip()
    if text == "":
        return None
    return float(text)


def load_csv(path) -> list[TradingDay]:
    """Load a minute CSV into trading days.

    Missing prices are forward-filled from the previous row (across day
    boundaries, since the book carries over); missing quantities and volume
    become 0. A missing ``adj_close`` falls back to ``close``; the column
    itself may be absent.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        has_adj = "adj_close" in header
        expected = CSV_HEADER if has_adj else tuple(h for h in CSV_HEADER if h != "adj_close")
        if header != expected:
            raise DataError(f"{path}: malformed header {header!r}")
        rows = list(reader)

    price_cols = [c for c in expected if c in ("open", "high", "low", "close")
                  or "price" in c]
    qty_cols = [c for c in expected if "qty" in c] + ["volume"]
    prev: dict[str, float] = {}
    errors: list[str] = []
    by_day: dict[str, list[MinuteRecord]] = {}
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(expected):
            raise DataError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
        raw = dict(zip(expected, row))
        try:
            ts = datetime.fromisoformat(raw["timestamp"].strip())
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad timestamp {raw['timestamp']!r}") from exc
        vals: dict[str, float] = {}
        for col in price_cols:
            v = _parse_float(raw[col])
            if v is None:
                if col not in prev:
                    raise DataError(
                        f"{path}:{lineno}: missing {col} with no previous value to fill from")
                v = prev[col]
            vals[col] = v
        for col in qty_cols:
            v = _parse_float(raw[col])
            vals[col] = 0.0 if v is None else v
        adj = _parse_float(raw["adj_close"]) if has_adj else None
        vals["adj_close"] = vals["close"] if adj is None else adj
        prev.update({c: vals[c] for c in price_cols})

        bar = Bar(ts, vals["open"], vals["high"], vals["low"], vals["close"],
                  vals["adj_close"], vals["volume"])
        lob = LobSnapshot(
            tuple(vals[f"bid_price_{i}"] for i in range(1, N_LEVELS + 1)),
            tuple(vals[f"bid_qty_{i}"] for i in range(1, N_LEVELS + 1)),
            tuple(vals[f"ask_price_{i}"] for i in range(1, N_LEVELS + 1)),
            tuple(vals[f"ask_qty_{i}"] for i in range(1, N_LEVELS + 1)),
        )
        try:
            bar.validate()
            lob.validate()
        except DataError as exc:
            errors.append(f"row {lineno}: {exc}")
            continue
        day_records = by_day.setdefault(ts.date().isoformat(), [])
        if day_records and day_records[-1].timestamp >= ts:
            raise DataError(f"{path}:{lineno}: non-monotonic timestamp {ts.isoformat()}")
        day_records.append(MinuteRecord(bar, lob))

    if errors:
        raise DataError(f"{path}: invalid rows:\n  " + "\n  ".join(errors))
    return [TradingDay(d, tuple(recs)) for d, recs in sorted(by_day.items())]


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(days: Sequence[TradingDay], path) -> None:
    """Write days in the loader's schema; floats use ``repr`` so a reload is
    bit-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for day in days:
            for rec in day.records:
                b, lob = rec.bar, rec.lob
                row = [b.timestamp.isoformat()]
                row += [_fmt(getattr(b, f)) for f in BAR_FIELDS]
                for i in range(N_LEVELS):
                    row += [_fmt(lob.bid_prices[i]), _fmt(lob.bid_qtys[i]),
                            _fmt(lob.ask_prices[i]), _fmt(lob.ask_qtys[i])]
                writer.writerow(row)


# ---------------------------------------------------------------------------
# features


def compute_indicators(day: TradingDay, t: int) -> np.ndarray:
    """The 11 macro indicators at minute ``t``, using only this day's bars.

    Order follows ``INDICATOR_NAMES``. Requires ``t >= 29``.
    """
    if t < WARMUP:
        raise ValueError(f"insufficient history: t={t} < {WARMUP}")
    if t >= len(day):
        raise IndexError(f"t={t} outside day of length {len(day)}")
    bar, prev = day.records[t].bar, day.records[t - 1].bar
    out = [
        bar.open / bar.close - 1.0,
        bar.high / bar.close - 1.0,
        bar.low / bar.close - 1.0,
        bar.close / prev.close - 1.0,
        bar.adj_close / prev.adj_close - 1.0,
    ]
    for w in MA_WINDOWS:
        window = [day.records[t - i].bar.adj_close for i in range(w)]
        out.append(sum(window) / w / bar.adj_close - 1.0)
    return np.array(out)


def indicator_matrix(day: TradingDay) -> np.ndarray:
    """Vectorized indicators for every minute; rows before the warmup are NaN."""
    bars = day.bar_matrix()
    o, h, l, c, adj = bars[:, 0], bars[:, 1], bars[:, 2], bars[:, 3], bars[:, 4]
    n = len(day)
    out = np.full((n, N_INDICATORS), np.nan)
    if n <= WARMUP:
        return out
    sl = slice(WARMUP, n)
    out[sl, 0] = o[sl] / c[sl] - 1.0
    out[sl, 1] = h[sl] / c[sl] - 1.0
    out[sl, 2] = l[sl] / c[sl] - 1.0
    out[sl, 3] = c[sl] / c[WARMUP - 1:n - 1] - 1.0
    out[sl, 4] = adj[sl] / adj[WARMUP - 1:n - 1] - 1.0
    csum = np.concatenate([[0.0], np.cumsum(adj)])
    idx = np.arange(WARMUP, n)
    for j, w in enumerate(MA_WINDOWS):
        mean = (csum[idx + 1] - csum[idx + 1 - w]) / w
        out[sl, 5 + j] = mean / adj[sl] - 1.0
    return out


def normalize_lob(lob: LobSnapshot) -> np.ndarray:
    """Per-level ratios to the first level, as a 20-vector laid out
    (bid_price_i, ask_price_i, bid_qty_i, ask_qty_i) for i = 1..5.

    A zero first-level quantity makes that side's quantity ratios 0.
    """
    bp1, ap1 = lob.bid_prices[0], lob.ask_prices[0]
    if bp1 <= 0 or ap1 <= 0:
        raise ValueError("level-1 prices must be positive")
    bq1, aq1 = lob.bid_qtys[0], lob.ask_qtys[0]
    out = np.empty(4 * N_LEVELS)
    out[0::4] = np.asarray(lob.bid_prices) / bp1
    out[1::4] = np.asarray(lob.ask_prices) / ap1
    out[2::4] = np.asarray(lob.bid_qtys) / bq1 if bq1 > 0 else 0.0
    out[3::4] = np.asarray(lob.ask_qtys) / aq1 if aq1 > 0 else 0.0
    return out


# ---------------------------------------------------------------------------
# synthetic data

PATTERNS = ("flat", "trend", "v-shape", "sine")


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of the synthetic minute/LOB generator.

    ``volatility`` is the per-minute relative noise, added as a random walk on
    top of the deterministic ``pattern``; ``pattern=None`` gives a pure random
    walk. ``amplitude`` is the relative size of the pattern move (the total
    drift for ``trend``, the depth of the ``v-shape`` trough, the peak of
    ``sine``). ``pivot`` is the v-shape trough minute (default: mid-day).
    """

    n_days: int = 1
    minutes_per_day: int = 240
    initial_price: float = 100.0
    tick_size: float = 0.2
    volatility: float = 0.0
    pattern: Optional[str] = "flat"
    amplitude: float = 0.02
    pivot: Optional[int] = None
    base_depth: float = 20.0
    start_date: str = "2021-01-04"
    session_start: str = "09:30"

    def validate(self) -> None:
        if self.n_days < 1 or self.minutes_per_day < 2:
            raise ValueError("n_days must be >= 1 and minutes_per_day >= 2")
        if not self.initial_price > 0 or not self.tick_size > 0:
            raise ValueError("initial_price and tick_size must be positive")
        if self.volatility < 0 or self.base_depth <= 0:
            raise ValueError("volatility must be >= 0 and base_depth > 0")
        if self.pattern is not None and self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}; expected one of {PATTERNS}")
        if self.pivot is not None and not 0 < self.pivot < self.minutes_per_day - 1:
            raise ValueError("pivot must lie strictly inside the day")
        if self.pattern == "v-shape" and not 0 < self.amplitude < 1:
            raise ValueError("v-shape amplitude must be in (0, 1)")


def pattern_curve(spec: GeneratorSpec) -> np.ndarray:
    """Deterministic relative price multiplier for one day."""
    n = spec.minutes_per_day
    x = np.arange(n, dtype=float)
    a = spec.amplitude
    if spec.pattern in (None, "flat"):
        return np.ones(n)
    if spec.pattern == "trend":
        return 1.0 + a * x / (n - 1)
    if spec.pattern == "sine":
        return 1.0 + a * np.sin(2 * np.pi * x / (n - 1))
    pivot = spec.pivot if spec.pivot is not None else (n - 1) // 2
    return np.where(x <= pivot, 1.0 - a * x / pivot,
                    1.0 - a + a * (x - pivot) / (n - 1 - pivot))


def _build_lob(close: float, tick: float, depth: np.ndarray) -> LobSnapshot:
    offs = (np.arange(N_LEVELS) + 0.5) * tick
    return LobSnapshot(
        tuple(float(v) for v in close - offs), tuple(float(v) for v in depth[0]),
        tuple(float(v) for v in close + offs), tuple(float(v) for v in depth[1]),
    )


def generate_synthetic(spec: GeneratorSpec, seed: int) -> list[TradingDay]:
    """Reproducible synthetic dataset.

    Each day restarts from ``initial_price`` scaled by the pattern, with
    multiplicative noise. The book straddles the close with a one-tick
    spread; level-i depth is ``base_depth * i`` with +/-20% jitter.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    n = spec.minutes_per_day
    curve = pattern_curve(spec)
    start = datetime.fromisoformat(f"{spec.start_date}T{spec.session_start}")
    days = []
    level_scale = np.arange(1, N_LEVELS + 1, dtype=float)
    for d in range(spec.n_days):
        if spec.volatility > 0:
            noise = np.exp(np.cumsum(rng.normal(0.0, spec.volatility, n)))
            noise /= noise[0]
        else:
            noise = np.ones(n)
        closes = spec.initial_price * curve * noise
        # keep the book's deepest bid positive
        closes = np.maximum(closes, (N_LEVELS + 1) * spec.tick_size)
        opens = np.concatenate([[closes[0]], closes[:-1]])
        wiggle = rng.uniform(0.0, 0.5, (n, 2)) * spec.tick_size if spec.volatility > 0 \
            else np.zeros((n, 2))
        highs = np.maximum(opens, closes) + wiggle[:, 0]
        lows = np.minimum(opens, closes) - wiggle[:, 1]
        volumes = np.round(rng.uniform(0.5, 1.5, n) * spec.base_depth * 10)
        depth = spec.base_depth * level_scale * rng.uniform(0.8, 1.2, (n, 2, N_LEVELS))
        depth = np.maximum(np.round(depth), 1.0)
        day_start = start + timedelta(days=d)
        records = []
        for i in range(n):
            ts = day_start + timedelta(minutes=i)
            c = float(closes[i])
            bar = Bar(ts, float(opens[i]), float(highs[i]), float(lows[i]), c, c,
                      float(volumes[i]))
            records.append(MinuteRecord(bar, _build_lob(c, spec.tick_size, depth[i])))
        days.append(TradingDay(day_start.date().isoformat(), tuple(records)))
    return days


def macro_matrix(day: TradingDay) -> np.ndarray:
    """(n, 16) macro inputs: the 11 indicators followed by OHLCV relative to
    the day's first bar (prices against the first close, volume against the
    first volume), each minus 1. Rows before the warmup are NaN."""
    bars = day.bar_matrix()
    ohlc = bars[:, [0, 1, 2, 3]] / bars[0, 3] - 1.0
    vol = bars[:, 5:6] / max(bars[0, 5], 1.0) - 1.0
    out = np.hstack([indicator_matrix(day), ohlc, vol])
    out[:WARMUP] = np.nan
    return out


def lob_matrix(day: TradingDay) -> np.ndarray:
    """(n, 20) normalized book for every minute."""
    return np.stack([normalize_lob(r.lob) for r in day.records])


def day_features(day: TradingDay) -> tuple[np.ndarray, np.ndarray]:
    """Cached ``(macro_matrix, lob_matrix)`` for ``day``."""
    cached = getattr(day, "_features", None)
    if cached is None:
        macro, lob = macro_matrix(day), lob_matrix(day)
        macro.setflags(write=False)
        lob.setflags(write=False)
        cached = (macro, lob)
        object.__setattr__(day, "_features", cached)
    return cached
