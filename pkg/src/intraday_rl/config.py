"""Flat JSON run configuration.

Every environment, training, network, baseline and metric option is a
top-level key. Unknown keys and out-of-range values raise ``ConfigError``
naming the offending key.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

from .agent import TrainConfig
from .env import EnvConfig
from .eval import DD_MODES
from .neural import NetworkConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration key."""


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration of one CLI run.

    Searched ranges for tuning: ``hindsight_horizon`` in {30, 60, ..., 180},
    hidden sizes in {32, 64, 128}.
    """

    # environment
    fee_rate: float = 2.3e-5
    leverage: float = 5.0
    max_position: int = 50
    n_p: int = 5
    n_q: int = 11
    tick_size: float = 0.2
    k: int = 4
    hindsight_weight: float = 0.1
    hindsight_horizon: int = 30
    execution: str = "close"
    # training
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    batch_size: int = 32
    target_update: int = 100
    epochs: int = 5
    eta: float = 1.0
    lr: float = 5e-4
    augmentations: int = 1
    buffer_capacity: int = 20000
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    per_eps: float = 1e-3
    max_grad_norm: Optional[float] = 10.0
    # network
    macro_hidden: int = 64
    macro_embed: int = 64
    lstm_hidden: int = 64
    head_hidden: int = 128
    # baselines and metrics
    mv_window: int = 20
    mv_std: float = 2.0
    tsm_lookback: int = 30
    dd_mode: str = "std"
    # data
    train_data: Optional[str] = None
    test_data: Optional[str] = None
    asset: Optional[str] = None
    seed: int = 0

    def env_config(self) -> EnvConfig:
        return EnvConfig(**_pick(self, EnvConfig))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**_pick(self, TrainConfig))

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(**_pick(self, NetworkConfig))

    def baseline_params(self) -> dict:
        return {"mv_window": self.mv_window, "mv_std": self.mv_std,
                "tsm_lookback": self.tsm_lookback}

    def validate(self) -> "RunConfig":
        for sub in (self.env_config, self.train_config):
            try:
                sub().validate()
            except ValueError as exc:
                key = str(exc).split(".", 1)[1].split(":", 1)[0]
                raise ConfigError(f"invalid value for {key!r}: {getattr(self, key)!r}") from None
        checks = [
            ("macro_hidden", self.macro_hidden >= 1),
            ("macro_embed", self.macro_embed >= 1),
            ("lstm_hidden", self.lstm_hidden >= 1),
            ("head_hidden", self.head_hidden >= 1),
            ("mv_window", self.mv_window >= 2),
            ("mv_std", self.mv_std > 0),
            ("tsm_lookback", self.tsm_lookback >= 1),
            ("dd_mode", self.dd_mode in DD_MODES),
            ("seed", 0 <= self.seed < 2 ** 64),
        ]
        for key, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value for {key!r}: {getattr(self, key)!r}")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


KEYS = tuple(f.name for f in fields(RunConfig))
_TYPES = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}


def _pick(cfg: RunConfig, cls) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cls) if f.name in KEYS}


def _coerce(key: str, value: Any) -> Any:
    if value is None:
        return None
    kind = _TYPES[key]
    if kind is type(None):  # optional paths
        kind = str
    if kind is bool or isinstance(value, bool):
        raise ConfigError(f"invalid value for {key!r}: {value!r}")
    if kind is int:
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"invalid value for {key!r}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if not isinstance(value, (int, float)):
            raise ConfigError(f"invalid value for {key!r}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"invalid value for {key!r}: expected a string, got {value!r}")
    return value


def config_from_mapping(data: Mapping[str, Any], base: Optional[RunConfig] = None) -> RunConfig:
    """Overlay ``data`` on ``base`` (defaults if omitted) and validate."""
    unknown = sorted(set(data) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = {k: _coerce(k, v) for k, v in data.items()}
    return replace(base or RunConfig(), **values).validate()


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Read a flat JSON object from ``path`` and apply ``overrides`` on top."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_mapping(data)
