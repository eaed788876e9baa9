"""Intraday trading with branching dueling Q-learning over limit order book replay."""

from .agent import TrainConfig, train
from .config import RunConfig, load_config
from .env import EnvConfig, TradingEnv
from .estimator import BaselineStrategy, ScalperAgent
from .eval import backtest, metrics_report
from .marketdata import GeneratorSpec, generate_synthetic, load_csv, write_csv
from .neural import NetworkConfig

__version__ = "0.1.0"

__all__ = [
    "BaselineStrategy", "EnvConfig", "GeneratorSpec", "NetworkConfig", "RunConfig",
    "ScalperAgent", "TradingEnv", "TrainConfig", "backtest", "generate_synthetic",
    "load_config", "load_csv", "metrics_report", "train", "write_csv",
]
