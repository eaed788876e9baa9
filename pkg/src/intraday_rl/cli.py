"""Command-line entry point: ``generate``, ``train``, ``backtest``, ``compare``.

Exit codes: 0 success, 1 other failure, 2 invalid configuration, 3 data
error, 4 checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from .agent import LOG_COLUMNS
from .config import ConfigError, RunConfig, load_config
from .estimator import ScalperAgent, check_days
from .eval import (BASELINES, GreedyQPolicy, RandomPolicy, backtest, make_baseline,
                   metrics_report, write_metrics_csv, write_net_value_csv, METRIC_COLUMNS)
from .marketdata import PATTERNS, DataError, GeneratorSpec, generate_synthetic, load_csv, write_csv

logger = logging.getLogger("intraday_rl")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3, 4


class CheckpointMismatch(Exception):
    """Checkpoint unreadable or incompatible with the run configuration."""


# ---------------------------------------------------------------------------
# helpers


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = _parse_value(value)
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    return out


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, cfg: RunConfig) -> None:
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")


def _load_days(path: Optional[str], key: str, cfg: RunConfig):
    if not path:
        raise ConfigError(f"no dataset given; set {key!r} or pass --data")
    try:
        days = load_csv(path)
        return check_days(days, cfg.env_config())
    except (OSError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: {exc}") from None


def _asset(cfg: RunConfig, path: str) -> str:
    return cfg.asset or Path(path).stem


def _load_agent(path: str, cfg: RunConfig) -> ScalperAgent:
    try:
        agent = ScalperAgent.load(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointMismatch(f"cannot read checkpoint {path}: {exc}") from None
    env, net = cfg.env_config(), cfg.network_config()
    saved_env, saved_net = agent._env(), agent.network_config_
    for key, want, have in (("n_p", env.n_p, saved_net.n_p), ("n_q", env.n_q, saved_net.n_q),
                            ("k", env.k, saved_env.k)):
        if want != have:
            raise CheckpointMismatch(f"checkpoint {path} has {key}={have}, config has {want}")
    for key in ("macro_hidden", "macro_embed", "lstm_hidden", "head_hidden"):
        if getattr(net, key) != getattr(saved_net, key):
            raise CheckpointMismatch(f"checkpoint {path} has {key}={getattr(saved_net, key)}, "
                                     f"config has {getattr(net, key)}")
    return agent


def _policy(spec: str, cfg: RunConfig):
    """Resolve a policy argument: a baseline name, ``random`` or a checkpoint path."""
    kind = spec.lower()
    if kind in BASELINES:
        return kind, make_baseline(kind, **cfg.baseline_params())
    if kind == "random":
        return "random", RandomPolicy(cfg.seed)
    agent = _load_agent(spec, cfg)
    return Path(spec).stem, GreedyQPolicy(agent.params_, agent.network_config_, Path(spec).stem)


def _run_policies(specs: Sequence[str], cfg: RunConfig, out: Path, data: str):
    days = _load_days(data, "test_data", cfg)
    asset = _asset(cfg, data)
    env = cfg.env_config()
    resolved, seen = [], {}
    for spec in specs:
        label, policy = _policy(spec, cfg)
        seen[label] = seen.get(label, 0) + 1
        if seen[label] > 1:
            label = f"{label}_{seen[label]}"
        resolved.append((label, policy))
    rows, series = [], []
    for label, policy in resolved:
        s = backtest(policy, days, env)
        rows.append((asset, label, metrics_report(s, cfg.dd_mode)))
        series.append((label, s))
    _echo_config(out, cfg)
    write_metrics_csv(out / "metrics.csv", rows)
    for label, s in series:
        write_net_value_csv(out / f"netvalue_{label}.csv", s)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for asset_name, label, report in rows:
        w.writerow([asset_name, label] + report.as_row())
    return rows


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    seed = args.seed if args.seed is not None else 0
    spec = GeneratorSpec(
        n_days=args.days, minutes_per_day=args.minutes, initial_price=args.initial_price,
        tick_size=args.tick_size, volatility=args.volatility,
        pattern=None if args.pattern == "random-walk" else args.pattern,
        amplitude=args.amplitude, pivot=args.pivot, base_depth=args.base_depth,
        start_date=args.start_date)
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = _out_dir(args)
    path = Path(args.file) if args.file else out / "synthetic.csv"
    write_csv(generate_synthetic(spec, seed), path)
    echo = {"generator": asdict(spec), "seed": seed}
    (out / "generate.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, {**_overrides(args), "train_data": args.data})
    days = _load_days(cfg.train_data, "train_data", cfg)
    out = _out_dir(args)
    agent = ScalperAgent(cfg.env_config(), cfg.train_config(), cfg.network_config(), cfg.seed)
    agent.fit(days)
    _echo_config(out, cfg)
    digest = agent.save(out / "checkpoint.bin")
    with (out / "train_log.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in agent.log_:
            w.writerow([row["epoch"], row["step"]] +
                       [repr(float(row[c])) for c in LOG_COLUMNS[2:]])
    print(f"checkpoint {out / 'checkpoint.bin'} sha256 {digest}")
    return EXIT_OK


def cmd_backtest(args) -> int:
    cfg = load_config(args.config, {**_overrides(args), "test_data": args.data})
    if (args.checkpoint is None) == (args.baseline is None):
        raise ConfigError("give exactly one of a checkpoint path or --baseline")
    spec = args.checkpoint if args.checkpoint is not None else args.baseline
    _run_policies([spec], cfg, _out_dir(args), cfg.test_data)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config, {**_overrides(args), "test_data": args.data})
    if len(args.policies) < 2:
        raise ConfigError("compare needs at least two policies")
    _run_policies(args.policies, cfg, _out_dir(args), cfg.test_data)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat JSON config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="intraday-rl", parents=[common],
                                     description="Intraday trading RL engine.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    gen.add_argument("--pattern", choices=PATTERNS + ("random-walk",), default="flat")
    gen.add_argument("--days", type=int, default=1)
    gen.add_argument("--minutes", type=int, default=240)
    gen.add_argument("--initial-price", type=float, default=100.0)
    gen.add_argument("--tick-size", type=float, default=0.2)
    gen.add_argument("--volatility", type=float, default=0.0)
    gen.add_argument("--amplitude", type=float, default=0.02)
    gen.add_argument("--pivot", type=int, default=None)
    gen.add_argument("--base-depth", type=float, default=20.0)
    gen.add_argument("--start-date", default="2021-01-04")
    gen.add_argument("--file", default=None, help="CSV path (default: <out>/synthetic.csv)")
    gen.set_defaults(func=cmd_generate)

    def with_config(p):
        p.add_argument("--data", default=None, help="dataset CSV (overrides the config)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key; repeatable")
        return p

    tr = with_config(sub.add_parser("train", parents=[common], help="train an agent"))
    tr.set_defaults(func=cmd_train)

    bt = with_config(sub.add_parser("backtest", parents=[common],
                                    help="backtest a checkpoint or a baseline"))
    bt.add_argument("checkpoint", nargs="?", default=None)
    bt.add_argument("--baseline", choices=BASELINES + ("random",), default=None)
    bt.set_defaults(func=cmd_backtest)

    cmp_ = with_config(sub.add_parser("compare", parents=[common],
                                      help="backtest several policies into one report"))
    cmp_.add_argument("policies", nargs="+",
                      help="baseline names (bah, mv, tsm, random) or checkpoint paths")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", "."), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointMismatch as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        logger.debug("unhandled error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
