"""Estimator-style wrappers around training and backtesting.

Trading days play the role of samples: ``fit`` consumes a list of
``TradingDay`` objects and ``score`` returns the total return of a
backtest over another list.
"""

from __future__ import annotations

from dataclasses import asdict
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .agent import TrainConfig, train
from .env import EnvConfig, EnvState
from .eval import (GreedyQPolicy, MetricsReport, NetValueSeries, backtest, make_baseline,
                   metrics_report, total_return)
from .marketdata import TradingDay
from .neural import NetworkConfig, StateBatch, forward, load_checkpoint, save_checkpoint

CHECKPOINT_VERSION = 1


def check_days(days, env_cfg: Optional[EnvConfig] = None) -> list[TradingDay]:
    """Validate a dataset of trading days.

    Raises
    ------
    ValueError
        If ``days`` is empty, holds something other than ``TradingDay`` or
        a day too short to trade after the indicator warmup.
    """
    if isinstance(days, TradingDay):
        days = [days]
    days = list(days)
    if not days:
        raise ValueError("empty dataset")
    warmup = (env_cfg or EnvConfig()).warmup
    for i, day in enumerate(days):
        if not isinstance(day, TradingDay):
            raise TypeError(f"day {i} is {type(day).__name__}, expected TradingDay")
        if len(day) < warmup + 2:
            raise ValueError(f"day {day.date} has {len(day)} minutes; "
                             f"need at least {warmup + 2}")
    return days


def check_states(X) -> StateBatch:
    """Accept a ``StateBatch``, one ``EnvState`` or a sequence of them."""
    if isinstance(X, StateBatch):
        return X
    if isinstance(X, EnvState):
        X = [X]
    X = list(X)
    if not X or not all(isinstance(s, EnvState) for s in X):
        raise TypeError("expected a StateBatch or a non-empty sequence of EnvState")
    return StateBatch.from_states(X)


class ScalperAgent(BaseEstimator):
    """Branching dueling Q-learning agent for intraday trading.

    Parameters
    ----------
    env_config : EnvConfig, optional
        Market simulation and reward parameters.
    train_config : TrainConfig, optional
        Optimization parameters. Its ``seed`` is overridden by ``seed``.
    network_config : NetworkConfig, optional
        Layer sizes; branch sizes are taken from ``env_config``.
    seed : int, default=0
        Seed for initialization, exploration and replay sampling.

    Attributes
    ----------
    params_ : dict
        Trained network tensors.
    network_config_ : NetworkConfig
    log_ : list of dict
        One row per epoch with ``epoch, step, loss_q, loss_vol, epsilon,
        train_tr``.
    n_transitions_ : int
    """

    def __init__(self, env_config: Optional[EnvConfig] = None,
                 train_config: Optional[TrainConfig] = None,
                 network_config: Optional[NetworkConfig] = None, seed: int = 0):
        self.env_config = env_config
        self.train_config = train_config
        self.network_config = network_config
        self.seed = seed

    def _env(self) -> EnvConfig:
        return self.env_config or EnvConfig()

    def _net(self) -> NetworkConfig:
        base = self.network_config or NetworkConfig()
        env = self._env()
        return NetworkConfig(**{**asdict(base), "n_p": env.n_p, "n_q": env.n_q})

    def fit(self, X: Sequence[TradingDay], y=None) -> "ScalperAgent":
        env = self._env()
        days = check_days(X, env)
        cfg = TrainConfig(**{**asdict(self.train_config or TrainConfig()), "seed": self.seed})
        net = self._net()
        result = train(days, env, cfg, net)
        self.params_ = result.params
        self.network_config_ = net
        self.log_ = result.log
        self.n_transitions_ = result.n_transitions
        return self

    def q_values(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Per-branch Q-values, shapes ``(n, n_p)`` and ``(n, n_q)``."""
        check_is_fitted(self, "params_")
        out, _ = forward(self.params_, check_states(X))
        return out.q_price, out.q_qty

    def predict(self, X) -> np.ndarray:
        """Greedy ``(price_idx, qty_idx)`` pairs, shape ``(n, 2)``."""
        q_p, q_q = self.q_values(X)
        return np.stack([q_p.argmax(axis=1), q_q.argmax(axis=1)], axis=1)

    def policy(self) -> GreedyQPolicy:
        check_is_fitted(self, "params_")
        return GreedyQPolicy(self.params_, self.network_config_)

    def backtest(self, X: Sequence[TradingDay]) -> NetValueSeries:
        env = self._env()
        return backtest(self.policy(), check_days(X, env), env)

    def evaluate(self, X: Sequence[TradingDay], dd_mode: str = "std") -> MetricsReport:
        return metrics_report(self.backtest(X), dd_mode)

    def score(self, X: Sequence[TradingDay], y=None) -> float:
        """Total return of a backtest over ``X``."""
        return total_return(self.backtest(X))

    def checkpoint_meta(self) -> dict:
        check_is_fitted(self, "params_")
        return {
            "version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "env": asdict(self._env()),
            "train": asdict(self.train_config or TrainConfig()),
            "network": asdict(self.network_config_),
        }

    def save(self, path) -> str:
        """Write a checkpoint and return its sha256 digest."""
        return save_checkpoint(path, self.params_, self.checkpoint_meta())

    @classmethod
    def load(cls, path) -> "ScalperAgent":
        params, meta = load_checkpoint(path)
        net = NetworkConfig(**meta["network"])
        expected = net.shapes()
        if list(params) != list(expected) or any(
                params[k].shape != tuple(expected[k]) for k in expected):
            raise ValueError("checkpoint tensors do not match its network header")
        agent = cls(EnvConfig(**meta["env"]), TrainConfig(**meta["train"]), net, meta["seed"])
        agent.params_ = params
        agent.network_config_ = net
        agent.log_ = []
        agent.n_transitions_ = 0
        return agent


class BaselineStrategy(BaseEstimator):
    """Rule-based benchmark (``bah``, ``mv`` or ``tsm``) with the same
    ``score`` interface as ``ScalperAgent``. ``fit`` learns nothing."""

    def __init__(self, kind: str = "bah", env_config: Optional[EnvConfig] = None,
                 mv_window: int = 20, mv_std: float = 2.0, tsm_lookback: int = 30):
        self.kind = kind
        self.env_config = env_config
        self.mv_window = mv_window
        self.mv_std = mv_std
        self.tsm_lookback = tsm_lookback

    def fit(self, X=None, y=None) -> "BaselineStrategy":
        self.policy_ = make_baseline(self.kind, self.mv_window, self.mv_std, self.tsm_lookback)
        return self

    def backtest(self, X: Sequence[TradingDay]) -> NetValueSeries:
        env = self.env_config or EnvConfig()
        if not hasattr(self, "policy_"):
            self.fit()
        return backtest(self.policy_, check_days(X, env), env)

    def evaluate(self, X: Sequence[TradingDay], dd_mode: str = "std") -> MetricsReport:
        return metrics_report(self.backtest(X), dd_mode)

    def score(self, X: Sequence[TradingDay], y=None) -> float:
        return total_return(self.backtest(X))
