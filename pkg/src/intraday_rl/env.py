"""Single-asset intraday trading MDP over a replayed trading day."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .exchange import EMPTY_FILL, Fill, LimitOrder, close_at_market, execute
from .marketdata import WARMUP, TradingDay, day_features

MACRO_DIM = 16
LOB_DIM = 20
PRIVATE_DIM = 3
EXECUTION_MODES = ("close", "lob-vwap")


@dataclass(frozen=True)
class EnvConfig:
    """Environment parameters.

    ``execution="close"`` books every admissible fill at the minute's close
    and uses the close-to-close reward formula; ``"lob-vwap"`` books at the
    fill VWAP and rewards the marked-to-market account change.
    """

    fee_rate: float = 2.3e-5
    leverage: float = 5.0
    max_position: int = 50
    n_p: int = 5
    n_q: int = 11
    tick_size: float = 0.2
    k: int = 4
    hindsight_weight: float = 0.1
    hindsight_horizon: int = 30
    warmup: int = WARMUP
    execution: str = "close"

    def validate(self) -> None:
        checks = [
            ("fee_rate", self.fee_rate >= 0),
            ("leverage", self.leverage >= 1),
            ("max_position", self.max_position >= 1),
            ("n_p", self.n_p >= 1),
            ("n_q", self.n_q >= 1 and self.n_q % 2 == 1),
            ("tick_size", self.tick_size > 0),
            ("k", self.k >= 0),
            ("hindsight_weight", self.hindsight_weight >= 0),
            ("hindsight_horizon", self.hindsight_horizon >= 1),
            ("warmup", self.warmup >= WARMUP),
            ("execution", self.execution in EXECUTION_MODES),
        ]
        for name, ok in checks:
            if not ok:
                raise ValueError(f"invalid EnvConfig.{name}: {getattr(self, name)!r}")


@dataclass(frozen=True)
class PrivateState:
    position: int
    cash: float
    remaining_time: float

    def normalized(self, max_position: int, c_1: float) -> np.ndarray:
        return np.array([self.position / max_position, self.cash / c_1,
                         self.remaining_time])


@dataclass(frozen=True)
class EnvState:
    macro: np.ndarray
    micro_lob_seq: np.ndarray
    micro_private_seq: np.ndarray
    private: PrivateState
    t: int
    close: float


@dataclass(frozen=True)
class Action:
    price_idx: int
    qty_idx: int


@dataclass
class StepResult:
    next_state: Optional[EnvState]
    reward: float
    hindsight_reward: float
    done: bool
    info: dict = field(default_factory=dict)


def account_value(private: PrivateState, price: float) -> float:
    """Cash plus the signed position marked at ``price``."""
    return private.cash + price * private.position


def net_value(private: PrivateState, p_close: float, c_1: float) -> float:
    """Normalized cash plus position value, with the position taken in
    absolute size."""
    if not c_1 > 0:
        raise ValueError("c_1 must be positive")
    return (private.cash + p_close * abs(private.position)) / c_1


def clamp_quantity(qty: int, position: int, cash: float, price: float,
                   cfg: EnvConfig) -> int:
    """Cut ``qty`` so the resulting position respects the hard cap and the
    leverage margin. Orders that reduce exposure always pass."""
    equity = cash + price * position
    margin_cap = math.floor(cfg.leverage * equity / price + 1e-9) if equity > 0 else 0
    cap = max(0, min(cfg.max_position, margin_cap))
    target = position + qty
    if qty > 0:
        target = min(target, max(cap, position))
    elif qty < 0:
        target = max(target, min(-cap, position))
    return target - position


def decode_action(a: Action, state: EnvState, cfg: EnvConfig) -> LimitOrder:
    if not (0 <= a.price_idx < cfg.n_p and 0 <= a.qty_idx < cfg.n_q):
        raise ValueError(f"action {a} outside branch sizes ({cfg.n_p}, {cfg.n_q})")
    price = state.close + (a.price_idx - (cfg.n_p - 1) / 2) * cfg.tick_size
    half = (cfg.n_q - 1) / 2
    raw = round(cfg.max_position * (a.qty_idx - half) / half) if half > 0 else 0
    priv = state.private
    qty = clamp_quantity(raw, priv.position, priv.cash, state.close, cfg)
    if qty == 0 or price <= 0:
        return LimitOrder(max(price, 0.0), 0)
    return LimitOrder(price, qty)


def hindsight_reward(day: TradingDay, t: int, pos_t: int, r_t: float,
                     cfg: EnvConfig) -> float:
    """Base reward plus the weighted profit of holding ``pos_t`` for the
    horizon, truncated at the day's last minute."""
    if not 0 <= t < len(day):
        raise IndexError(f"t={t} outside day")
    if cfg.hindsight_weight == 0 or pos_t == 0:
        return r_t
    closes = day.closes
    ahead = closes[min(t + cfg.hindsight_horizon, len(day) - 1)]
    return r_t + cfg.hindsight_weight * (ahead - closes[t]) * pos_t


def default_initial(day: TradingDay, cfg: EnvConfig) -> PrivateState:
    """Flat book with enough leveraged cash to hold ``max_position``."""
    p = day.closes[cfg.warmup]
    return PrivateState(0, cfg.max_position * p / cfg.leverage, 1.0)


def augmented_initial(day: TradingDay, cfg: EnvConfig, position: int) -> PrivateState:
    """Start holding ``position`` with the account worth the default cash."""
    base = default_initial(day, cfg)
    p = day.closes[cfg.warmup]
    return PrivateState(position, base.cash - position * p, 1.0)


class TradingEnv:
    """Replays one trading day minute by minute.

    Actions are taken from minute ``warmup`` through the last minute; the
    last step ignores the action and flattens the position at market.
    """

    def __init__(self, day: TradingDay, cfg: EnvConfig):
        cfg.validate()
        if len(day) <= cfg.warmup + 1:
            raise ValueError(
                f"day {day.date} has {len(day)} minutes; need more than {cfg.warmup + 1}")
        self.day = day
        self.cfg = cfg
        self.last = len(day) - 1
        self._macro, self._lob = day_features(day)
        self.state: Optional[EnvState] = None
        self.c_1 = float("nan")

    @property
    def n_steps(self) -> int:
        return self.last - self.cfg.warmup + 1

    def reset(self, initial: Optional[PrivateState] = None) -> EnvState:
        cfg = self.cfg
        base = default_initial(self.day, cfg)
        if initial is None:
            initial = base
        if abs(initial.position) > cfg.max_position:
            raise ValueError("initial position exceeds max_position")
        self.c_1 = base.cash
        self._history = [initial.normalized(cfg.max_position, self.c_1)]
        self.state = self._make_state(cfg.warmup, initial)
        return self.state

    def _make_state(self, t: int, private: PrivateState) -> EnvState:
        k = self.cfg.k
        idx = np.maximum(np.arange(t - k, t + 1), 0)
        hist = self._history[-(k + 1):]
        if len(hist) < k + 1:
            hist = [hist[0]] * (k + 1 - len(hist)) + hist
        return EnvState(
            macro=self._macro[t],
            micro_lob_seq=self._lob[idx],
            micro_private_seq=np.stack(hist),
            private=private,
            t=t,
            close=float(self.day.closes[t]),
        )

    def remaining_time(self, t: int) -> float:
        return (self.last - t) / (self.last - self.cfg.warmup)

    def step(self, a: Action) -> StepResult:
        if self.state is None:
            raise RuntimeError("stepping a terminal or un-reset environment")
        if self.state.t == self.last:
            return self._advance(None)
        return self._advance(decode_action(a, self.state, self.cfg))

    def step_order(self, order: LimitOrder) -> StepResult:
        """Step with an explicit order; quantity is re-clamped to the
        position and margin limits."""
        if self.state is None:
            raise RuntimeError("stepping a terminal or un-reset environment")
        if self.state.t == self.last:
            return self._advance(None)
        priv = self.state.private
        qty = clamp_quantity(order.signed_qty, priv.position, priv.cash,
                             self.state.close, self.cfg)
        return self._advance(replace(order, signed_qty=qty) if qty else LimitOrder(0.0, 0))

    def _advance(self, order: Optional[LimitOrder]) -> StepResult:
        cfg, state = self.cfg, self.state
        t, priv = state.t, state.private
        lob = self.day.records[t].lob
        closes = self.day.closes
        p_t = closes[t]
        done = t == self.last
        fill: Fill = close_at_market(priv.position, lob) if done else (
            execute(order, lob) if order.signed_qty else EMPTY_FILL)
        dpos = fill.filled_qty
        pos = priv.position + dpos
        book = fill.vwap if (cfg.execution == "lob-vwap" and dpos) else p_t
        fee = cfg.fee_rate * book * abs(dpos)
        cash = priv.cash - dpos * book - fee
        p_next = p_t if done else closes[t + 1]
        if cfg.execution == "close":
            reward = (p_next - p_t) * pos - cfg.fee_rate * p_t * abs(pos - priv.position)
        else:
            reward = (cash + p_next * pos) - (priv.cash + p_t * priv.position)
        hind = hindsight_reward(self.day, t, pos, reward, cfg)

        if done:
            nxt = PrivateState(pos, cash, 0.0)
            self.state = None
            next_state = None
        else:
            nxt = PrivateState(pos, cash, self.remaining_time(t + 1))
            self._history.append(nxt.normalized(cfg.max_position, self.c_1))
            next_state = self._make_state(t + 1, nxt)
            self.state = next_state
        info = {
            "t": t,
            "fill": fill,
            "position": pos,
            "cash": cash,
            "account_value": cash + p_next * pos,
            "c_1": self.c_1,
        }
        return StepResult(next_state, reward, hind, done, info)
