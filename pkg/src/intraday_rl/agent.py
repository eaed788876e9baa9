"""Branching dueling Q-learning with a volatility auxiliary loss,
prioritized replay, a hard-refreshed target network and private-state
augmentation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .env import (Action, EnvConfig, EnvState, TradingEnv, augmented_initial)
from .marketdata import TradingDay
from .neural import (AdamState, ForwardOutput, NetworkConfig, Params, StateBatch,
                     adam_step, backward, copy_params, forward, global_norm, init_params)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    batch_size: int = 32
    target_update: int = 100
    epochs: int = 5
    eta: float = 1.0
    lr: float = 5e-4
    seed: int = 0
    augmentations: int = 1
    buffer_capacity: int = 20000
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    per_eps: float = 1e-3
    max_grad_norm: Optional[float] = 10.0

    def validate(self) -> None:
        checks = [
            ("gamma", 0 <= self.gamma < 1),
            ("epsilon_start", 0 <= self.epsilon_start <= 1),
            ("epsilon_end", 0 <= self.epsilon_end <= 1),
            ("epsilon_decay_fraction", 0 < self.epsilon_decay_fraction <= 1),
            ("batch_size", self.batch_size >= 1),
            ("target_update", self.target_update >= 1),
            ("epochs", self.epochs >= 1),
            ("eta", self.eta >= 0),
            ("lr", self.lr > 0),
            ("augmentations", self.augmentations >= 0),
            ("buffer_capacity", self.buffer_capacity >= self.batch_size),
            ("per_alpha", self.per_alpha >= 0),
            ("per_beta0", 0 <= self.per_beta0 <= 1),
            ("per_eps", self.per_eps > 0),
            ("max_grad_norm", self.max_grad_norm is None or self.max_grad_norm > 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ValueError(f"invalid TrainConfig.{name}: {getattr(self, name)!r}")


@dataclass
class Transition:
    state: EnvState
    action: Action
    reward: float
    next_state: Optional[EnvState]
    done: bool
    vol_target: float


class ReplayBuffer:
    """Proportional prioritized replay over preallocated arrays.

    New transitions enter with the current maximum priority. When full, the
    oldest slot is overwritten.
    """

    def __init__(self, capacity: int, seq_len: int, alpha: float = 0.6,
                 eps: float = 1e-3, macro_dim: int = 16, lob_dim: int = 20,
                 private_dim: int = 3):
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.macro = np.zeros((capacity, macro_dim))
        self.lob = np.zeros((capacity, seq_len, lob_dim))
        self.prv = np.zeros((capacity, seq_len, private_dim))
        self.next_macro = np.zeros_like(self.macro)
        self.next_lob = np.zeros_like(self.lob)
        self.next_prv = np.zeros_like(self.prv)
        self.actions = np.zeros((capacity, 2), dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.vol_targets = np.zeros(capacity)
        self.priorities = np.zeros(capacity)
        self.size = 0
        self._pos = 0
        self._max_priority = 1.0

    def __len__(self) -> int:
        return self.size

    def add(self, tr: Transition) -> int:
        if tr.vol_target < 0:
            raise ValueError("vol_target must be non-negative")
        i = self._pos
        s = tr.state
        self.macro[i], self.lob[i], self.prv[i] = s.macro, s.micro_lob_seq, s.micro_private_seq
        if tr.next_state is None:
            self.next_macro[i] = 0.0
            self.next_lob[i] = 0.0
            self.next_prv[i] = 0.0
        else:
            n = tr.next_state
            self.next_macro[i] = n.macro
            self.next_lob[i] = n.micro_lob_seq
            self.next_prv[i] = n.micro_private_seq
        self.actions[i] = (tr.action.price_idx, tr.action.qty_idx)
        self.rewards[i] = tr.reward
        self.dones[i] = tr.done
        self.vol_targets[i] = tr.vol_target
        self.priorities[i] = self._max_priority
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def probabilities(self) -> np.ndarray:
        scaled = self.priorities[:self.size] ** self.alpha
        return scaled / scaled.sum()

    def update_priorities(self, idx: np.ndarray, priorities: np.ndarray) -> None:
        priorities = np.asarray(priorities, dtype=float)
        if np.any(priorities <= 0):
            raise ValueError("priorities must be positive")
        self.priorities[idx] = priorities
        self._max_priority = max(self._max_priority, float(priorities.max()))

    def batch(self, idx: np.ndarray) -> dict:
        return {
            "states": StateBatch(self.macro[idx], self.lob[idx], self.prv[idx]),
            "next_states": StateBatch(self.next_macro[idx], self.next_lob[idx],
                                      self.next_prv[idx]),
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "dones": self.dones[idx],
            "vol_targets": self.vol_targets[idx],
        }


def per_sample(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator,
               beta: float = 0.4) -> tuple[np.ndarray, dict, np.ndarray]:
    """Draw ``batch_size`` indices with probability proportional to
    priority**alpha; importance weights are normalized by the batch max."""
    if len(buffer) < batch_size:
        raise ValueError(f"buffer holds {len(buffer)} transitions, need {batch_size}")
    probs = buffer.probabilities()
    idx = rng.choice(len(buffer), size=batch_size, p=probs)
    weights = (len(buffer) * probs[idx]) ** (-beta)
    weights /= weights.max()
    return idx, buffer.batch(idx), weights


def select_action(output: ForwardOutput, epsilon: float, rng: np.random.Generator) -> Action:
    """Per-branch argmax (ties to the lowest index) or, with probability
    ``epsilon``, a uniformly random pair. Uses row 0 of a batched output."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must be in [0, 1]")
    q_p = np.atleast_2d(output.q_price)[0]
    q_q = np.atleast_2d(output.q_qty)[0]
    if rng.random() < epsilon:
        return Action(int(rng.integers(len(q_p))), int(rng.integers(len(q_q))))
    return Action(int(np.argmax(q_p)), int(np.argmax(q_q)))


def random_action(n_p: int, n_q: int, rng: np.random.Generator) -> Action:
    return Action(int(rng.integers(n_p)), int(rng.integers(n_q)))


def td_targets(rewards: np.ndarray, next_states: StateBatch, dones: np.ndarray,
               target_params: Params, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """One-step targets per branch from the frozen network; terminal rows
    take the reward alone."""
    rewards = np.asarray(rewards, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if len(rewards) == 0:
        raise ValueError("empty batch")
    if gamma == 0 or dones.all():
        return rewards.copy(), rewards.copy()
    out, _ = forward(target_params, next_states)
    live = ~dones
    y_p = rewards.copy()
    y_q = rewards.copy()
    y_p[live] += gamma * out.q_price[live].max(axis=1)
    y_q[live] += gamma * out.q_qty[live].max(axis=1)
    return y_p, y_q


@dataclass
class LossResult:
    loss: float
    loss_q: float
    loss_vol: float
    grads: Params
    td_price: np.ndarray
    td_qty: np.ndarray


def loss(params: Params, states: StateBatch, actions: np.ndarray, y_p: np.ndarray,
         y_q: np.ndarray, vol_targets: np.ndarray, eta: float,
         weights: Optional[np.ndarray] = None) -> LossResult:
    """Importance-weighted batch mean of
    ``0.5*((y_p-Q_p)^2 + (y_q-Q_q)^2) + eta*(y_vol - vol_pred)^2``."""
    out, tape = forward(params, states)
    B = len(states)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=float)
    rows = np.arange(B)
    a_p, a_q = actions[:, 0], actions[:, 1]
    td_p = y_p - out.q_price[rows, a_p]
    td_q = y_q - out.q_qty[rows, a_q]
    vol_err = out.vol_pred - vol_targets
    per_q = 0.5 * (td_p ** 2 + td_q ** 2)
    per_vol = vol_err ** 2
    loss_q = float(np.sum(w * per_q) / B)
    loss_vol = float(np.sum(w * per_vol) / B)

    dq_p = np.zeros_like(out.q_price)
    dq_q = np.zeros_like(out.q_qty)
    dq_p[rows, a_p] = -w * td_p / B
    dq_q[rows, a_q] = -w * td_q / B
    dvol = 2.0 * eta * w * vol_err / B
    grads = backward(params, tape, dq_p, dq_q, dvol)
    return LossResult(loss_q + eta * loss_vol, loss_q, loss_vol, grads, td_p, td_q)


def compute_vol_target(day: TradingDay, t: int, h: int) -> float:
    """Population variance of the one-minute close returns from ``t`` over
    the next ``h`` minutes, truncated at the day's end; fewer than two
    returns give 0."""
    if not 0 <= t < len(day):
        raise IndexError(f"t={t} outside day")
    end = min(t + h, len(day) - 1)
    closes = day.closes[t:end + 1]
    if len(closes) < 3:
        return 0.0
    rets = closes[1:] / closes[:-1] - 1.0
    return float(np.var(rets))


def epsilon_at(step: int, total: int, cfg: TrainConfig) -> float:
    horizon = max(1, int(total * cfg.epsilon_decay_fraction))
    frac = min(1.0, step / horizon)
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


LOG_COLUMNS = ("epoch", "step", "loss_q", "loss_vol", "epsilon", "train_tr")


@dataclass
class TrainResult:
    params: Params
    log: list = field(default_factory=list)
    n_transitions: int = 0
    n_updates: int = 0
    buffer: Optional[ReplayBuffer] = field(default=None, repr=False)


def network_config_for(env_cfg: EnvConfig, **sizes) -> NetworkConfig:
    return NetworkConfig(n_p=env_cfg.n_p, n_q=env_cfg.n_q, **sizes)


def train(days: Sequence[TradingDay], env_cfg: EnvConfig, cfg: TrainConfig,
          net_cfg: Optional[NetworkConfig] = None, on_transition=None) -> TrainResult:
    """Train a branching dueling Q-network on ``days``.

    Every day is replayed ``1 + cfg.augmentations`` times per epoch; the
    extra replays start from a random position with cash chosen so the
    account is worth the default starting cash. Transitions carry the
    hindsight reward.
    """
    if not days:
        raise ValueError("empty dataset")
    env_cfg.validate()
    cfg.validate()
    net_cfg = net_cfg or network_config_for(env_cfg)
    if (net_cfg.n_p, net_cfg.n_q) != (env_cfg.n_p, env_cfg.n_q):
        raise ValueError("network branch sizes do not match the environment")

    rng = np.random.default_rng(cfg.seed)
    params = init_params(net_cfg, int(rng.integers(2 ** 31)))
    target = copy_params(params)
    adam = AdamState(lr=cfg.lr)
    buffer = ReplayBuffer(cfg.buffer_capacity, env_cfg.k + 1, cfg.per_alpha, cfg.per_eps,
                          net_cfg.macro_dim, net_cfg.lob_dim, net_cfg.private_dim)
    envs = [TradingEnv(day, env_cfg) for day in days]
    vol_targets = [
        np.array([compute_vol_target(day, t, env_cfg.hindsight_horizon)
                  for t in range(len(day))]) for day in days]
    replays = 1 + cfg.augmentations
    total = cfg.epochs * replays * sum(e.n_steps for e in envs)
    result = TrainResult(params, buffer=buffer)
    step = 0

    for epoch in range(1, cfg.epochs + 1):
        losses_q, losses_vol = [], []
        growth = 1.0
        eps = epsilon_at(step, total, cfg)
        for env, vols in zip(envs, vol_targets):
            for replay in range(replays):
                initial = None
                if replay > 0:
                    pos = int(rng.integers(-env_cfg.max_position, env_cfg.max_position + 1))
                    initial = augmented_initial(env.day, env_cfg, pos)
                state = env.reset(initial)
                while True:
                    eps = epsilon_at(step, total, cfg)
                    if rng.random() < eps:
                        action = random_action(env_cfg.n_p, env_cfg.n_q, rng)
                    else:
                        out, _ = forward(params, StateBatch.from_states([state]))
                        action = select_action(out, 0.0, rng)
                    res = env.step(action)
                    tr = Transition(state, action, res.hindsight_reward, res.next_state,
                                    res.done, float(vols[state.t]))
                    buffer.add(tr)
                    if on_transition is not None:
                        on_transition(tr, res)
                    result.n_transitions += 1
                    step += 1
                    if len(buffer) >= cfg.batch_size:
                        beta = cfg.per_beta0 + (1.0 - cfg.per_beta0) * min(1.0, step / total)
                        lq, lv = _update(params, target, adam, buffer, cfg, beta, rng)
                        losses_q.append(lq)
                        losses_vol.append(lv)
                        result.n_updates += 1
                        if result.n_updates % cfg.target_update == 0:
                            target = copy_params(params)
                    if res.done:
                        if replay == 0:
                            growth *= res.info["account_value"] / env.c_1
                        break
                    state = res.next_state
        row = {
            "epoch": epoch,
            "step": step,
            "loss_q": float(np.mean(losses_q)) if losses_q else float("nan"),
            "loss_vol": float(np.mean(losses_vol)) if losses_vol else float("nan"),
            "epsilon": eps,
            "train_tr": growth - 1.0,
        }
        result.log.append(row)
        logger.info("epoch %d step %d loss_q %.6g loss_vol %.3g eps %.3f train_tr %.4f",
                    epoch, step, row["loss_q"], row["loss_vol"], eps, row["train_tr"])
    return result


def _update(params, target, adam, buffer, cfg: TrainConfig, beta, rng):
    idx, batch, weights = per_sample(buffer, cfg.batch_size, rng, beta)
    y_p, y_q = td_targets(batch["rewards"], batch["next_states"], batch["dones"],
                          target, cfg.gamma)
    res = loss(params, batch["states"], batch["actions"], y_p, y_q,
               batch["vol_targets"], cfg.eta, weights)
    grads = res.grads
    if cfg.max_grad_norm is not None:
        norm = global_norm(grads)
        if norm > cfg.max_grad_norm:
            scale = cfg.max_grad_norm / norm
            grads = {k: g * scale for k, g in grads.items()}
    adam_step(params, grads, adam)
    td = 0.5 * (np.abs(res.td_price) + np.abs(res.td_qty))
    buffer.update_priorities(idx, td + cfg.per_eps)
    return res.loss_q, res.loss_vol


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
