"""Backtesting, risk-adjusted metrics and rule-based baselines."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .agent import random_action
from .env import Action, EnvConfig, EnvState, TradingEnv
from .exchange import LimitOrder
from .marketdata import TradingDay
from .neural import NetworkConfig, Params, StateBatch, forward

DD_MODES = ("std", "var")
BASELINES = ("bah", "mv", "tsm")
METRIC_COLUMNS = ("asset", "policy", "tr", "sr", "cr", "sor", "mdd")


class UndefinedMetricError(ArithmeticError):
    """A ratio whose risk denominator is zero or empty."""


# ---------------------------------------------------------------------------
# policies


class Policy:
    """Decides one step; returns an ``Action`` or an explicit ``LimitOrder``."""

    name = "policy"

    def begin_day(self, env: TradingEnv) -> None:
        pass

    def decide(self, state: EnvState, env: TradingEnv) -> Union[Action, LimitOrder]:
        raise NotImplementedError


class GreedyQPolicy(Policy):
    """Argmax of each branch of a trained network."""

    name = "agent"

    def __init__(self, params: Params, net_cfg: NetworkConfig, name: str = "agent"):
        self.params = params
        self.net_cfg = net_cfg
        self.name = name

    def decide(self, state, env):
        if (self.net_cfg.n_p, self.net_cfg.n_q) != (env.cfg.n_p, env.cfg.n_q):
            raise ValueError("checkpoint branch sizes do not match the environment")
        out, _ = forward(self.params, StateBatch.from_states([state]))
        return Action(int(np.argmax(out.q_price[0])), int(np.argmax(out.q_qty[0])))


class RandomPolicy(Policy):
    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def decide(self, state, env):
        return random_action(env.cfg.n_p, env.cfg.n_q, self.rng)


class TargetPositionPolicy(Policy):
    """Trades toward a target position with the most aggressive price the
    action grid allows."""

    def target(self, env: TradingEnv, t: int) -> int:
        raise NotImplementedError

    def decide(self, state, env):
        cfg = env.cfg
        qty = self.target(env, state.t) - state.private.position
        if qty == 0:
            return LimitOrder(0.0, 0)
        offset = (cfg.n_p - 1) / 2 * cfg.tick_size
        price = state.close + offset if qty > 0 else state.close - offset
        return LimitOrder(max(price, cfg.tick_size), qty)


class BuyAndHold(TargetPositionPolicy):
    """Full long position from the first tradable minute; the environment
    flattens it at the close."""

    name = "bah"

    def target(self, env, t):
        return env.cfg.max_position


class MeanReversion(TargetPositionPolicy):
    """Bollinger bands on the day's closes: long below the lower band, short
    above the upper band, flat in between."""

    name = "mv"

    def __init__(self, window: int = 20, n_std: float = 2.0):
        self.window = window
        self.n_std = n_std

    def bands(self, closes: np.ndarray, t: int) -> tuple[float, float, float]:
        w = closes[max(0, t - self.window + 1):t + 1]
        mid, sd = float(w.mean()), float(w.std())
        return mid - self.n_std * sd, mid, mid + self.n_std * sd

    def target(self, env, t):
        closes = env.day.closes
        lower, _, upper = self.bands(closes, t)
        if closes[t] < lower:
            return env.cfg.max_position
        if closes[t] > upper:
            return -env.cfg.max_position
        return 0


class TimeSeriesMomentum(TargetPositionPolicy):
    """Direction of the trailing ``lookback``-minute return."""

    name = "tsm"

    def __init__(self, lookback: int = 30):
        self.lookback = lookback

    def target(self, env, t):
        closes = env.day.closes
        ret = closes[t] / closes[max(0, t - self.lookback)] - 1.0
        return int(np.sign(ret)) * env.cfg.max_position


def make_baseline(kind: str, mv_window: int = 20, mv_std: float = 2.0,
                  tsm_lookback: int = 30) -> TargetPositionPolicy:
    kind = kind.lower()
    if kind == "bah":
        return BuyAndHold()
    if kind == "mv":
        return MeanReversion(mv_window, mv_std)
    if kind == "tsm":
        return TimeSeriesMomentum(tsm_lookback)
    raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")


# ---------------------------------------------------------------------------
# backtest


@dataclass
class NetValueSeries:
    """Minute net values chained across days.

    ``day_ends[d]`` is the index of day ``d``'s final (post-close) value.
    """

    timestamps: list
    values: np.ndarray
    day_ends: list
    positions: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.values)

    def daily_values(self) -> np.ndarray:
        return np.concatenate([[self.values[0]], self.values[self.day_ends]])

    def daily_returns(self) -> np.ndarray:
        dv = self.daily_values()
        return dv[1:] / dv[:-1] - 1.0


def backtest(policy: Policy, days: Sequence[TradingDay], env_cfg: EnvConfig) -> NetValueSeries:
    """Run ``policy`` over ``days`` with the base reward.

    Each day opens with the default flat account and is flattened at the
    close. Values are marked to market (signed position) and chained so
    each day starts where the previous one ended. The series stops early if
    the account is wiped out.
    """
    if not days:
        raise ValueError("empty dataset")
    cfg = replace(env_cfg, hindsight_weight=0.0)
    timestamps: list[datetime] = []
    values: list[float] = []
    positions: list[int] = []
    day_ends: list[int] = []
    chain = 1.0
    for day in days:
        env = TradingEnv(day, cfg)
        state = env.reset()
        policy.begin_day(env)
        timestamps.append(day.records[state.t].timestamp)
        values.append(chain)
        positions.append(0)
        wiped = False
        while True:
            decision = policy.decide(state, env)
            res = env.step_order(decision) if isinstance(decision, LimitOrder) \
                else env.step(decision)
            value = chain * res.info["account_value"] / env.c_1
            if res.done:
                values[-1] = value
                positions[-1] = res.info["position"]
                break
            timestamps.append(day.records[res.info["t"] + 1].timestamp)
            values.append(value)
            positions.append(res.info["position"])
            if value <= 0:
                wiped = True
                break
            state = res.next_state
        day_ends.append(len(values) - 1)
        chain = values[-1]
        if wiped:
            break
    return NetValueSeries(timestamps, np.array(values), day_ends, np.array(positions))


# ---------------------------------------------------------------------------
# metrics


def total_return(series) -> float:
    v = _values(series)
    if len(v) == 0:
        raise ValueError("empty series")
    return float((v[-1] - v[0]) / v[0])


def sharpe_ratio(returns) -> float:
    r = np.asarray(returns, dtype=float)
    if len(r) < 2:
        raise ValueError("need at least 2 returns")
    sd = float(np.std(r))
    if np.ptp(r) == 0 or sd == 0:
        raise UndefinedMetricError("zero volatility")
    return float(np.mean(r)) / sd


def max_drawdown(series) -> float:
    """Largest relative fall from the running peak, single pass."""
    v = _values(series)
    if len(v) == 0:
        raise ValueError("empty series")
    peak = -math.inf
    mdd = 0.0
    for x in v:
        if x > peak:
            peak = x
        dd = (peak - x) / peak
        if dd > mdd:
            mdd = dd
    return float(mdd)


def calmar_ratio(returns, mdd: float) -> float:
    if mdd == 0:
        raise UndefinedMetricError("zero drawdown")
    return float(np.mean(np.asarray(returns, dtype=float))) / mdd


def downside_deviation(returns, dd_mode: str = "std") -> float:
    """Root mean square of the negative returns (``dd_mode="std"``), or
    its square (``"var"``)."""
    if dd_mode not in DD_MODES:
        raise ValueError(f"dd_mode must be one of {DD_MODES}")
    r = np.asarray(returns, dtype=float)
    neg = r[r < 0]
    if len(neg) == 0:
        raise UndefinedMetricError("no negative returns")
    semivar = float(np.mean(neg * neg))
    return semivar if dd_mode == "var" else math.sqrt(semivar)


def sortino_ratio(returns, dd_mode: str = "std") -> float:
    return float(np.mean(np.asarray(returns, dtype=float))) / downside_deviation(returns, dd_mode)


def sharpe(series: NetValueSeries) -> float:
    return sharpe_ratio(series.daily_returns())


def calmar(series: NetValueSeries) -> float:
    return calmar_ratio(series.daily_returns(), max_drawdown(series))


def sortino(series: NetValueSeries, dd_mode: str = "std") -> float:
    return sortino_ratio(series.daily_returns(), dd_mode)


def _values(series) -> np.ndarray:
    if isinstance(series, NetValueSeries):
        return series.values
    return np.asarray(series, dtype=float)


@dataclass(frozen=True)
class MetricsReport:
    """``None`` marks a metric that is undefined for the series."""

    tr: float
    sr: Optional[float]
    cr: Optional[float]
    sor: Optional[float]
    mdd: float

    def as_row(self) -> list[str]:
        return [_fmt(x) for x in (self.tr, self.sr, self.cr, self.sor, self.mdd)]


def _maybe(fn, *args):
    try:
        return fn(*args)
    except (UndefinedMetricError, ValueError):
        return None


def metrics_report(series: NetValueSeries, dd_mode: str = "std") -> MetricsReport:
    returns = series.daily_returns()
    mdd = max_drawdown(series)
    return MetricsReport(
        tr=total_return(series),
        sr=_maybe(sharpe_ratio, returns),
        cr=_maybe(calmar_ratio, returns, mdd),
        sor=_maybe(sortino_ratio, returns, dd_mode),
        mdd=mdd,
    )


def baseline(kind: str, days: Sequence[TradingDay], env_cfg: EnvConfig, **params) -> NetValueSeries:
    return backtest(make_baseline(kind, **params), days, env_cfg)


# ---------------------------------------------------------------------------
# CSV output


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "NA"
    return repr(float(x))


def write_metrics_csv(path, rows: Sequence[tuple[str, str, MetricsReport]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for asset, policy, report in rows:
            w.writerow([asset, policy] + report.as_row())


def read_metrics_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_net_value_csv(path, series: NetValueSeries) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("timestamp", "net_value"))
        for ts, v in zip(series.timestamps, series.values):
            w.writerow((ts.isoformat(), repr(float(v))))
