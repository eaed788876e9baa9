import numpy as np
import pytest
from scipy import stats

from intraday_rl.agent import (ReplayBuffer, TrainConfig, Transition, compute_vol_target,
                               loss, per_sample, select_action, td_targets, train)
from intraday_rl.env import Action, EnvConfig, TradingEnv
from intraday_rl.marketdata import GeneratorSpec, generate_synthetic
from intraday_rl.neural import (ForwardOutput, NetworkConfig, StateBatch, dumps_checkpoint,
                                forward, init_params)

from conftest import day_from_closes

TINY = NetworkConfig(macro_hidden=8, macro_embed=8, lstm_hidden=8, head_hidden=8)


def _out(qp, qq):
    qp, qq = np.atleast_2d(qp).astype(float), np.atleast_2d(qq).astype(float)
    return ForwardOutput(qp, qq, qp.mean(1), np.zeros(1), np.zeros((1, 1)))


def test_greedy_selection():
    rng = np.random.default_rng(0)
    a = select_action(_out([0, 1, 0, 0, 0], np.zeros(11)), 0.0, rng)
    assert a == Action(1, 0)
    assert select_action(_out(np.ones(5), np.ones(11)), 0.0, rng) == Action(0, 0)


def test_random_selection_uniform():
    rng = np.random.default_rng(1)
    out = _out(np.arange(5), np.arange(11))
    picks = [select_action(out, 1.0, rng) for _ in range(10_000)]
    for counts in (np.bincount([a.price_idx for a in picks], minlength=5),
                   np.bincount([a.qty_idx for a in picks], minlength=11)):
        assert stats.chisquare(counts).pvalue > 0.0027  # 3 sigma


def test_greedy_invariant_to_positive_advantage_scaling(rng):
    params = init_params(TINY, 3)
    batch = StateBatch(rng.normal(size=(1, 16)), rng.normal(size=(1, 5, 20)),
                       rng.normal(size=(1, 5, 3)))
    base = select_action(forward(params, batch)[0], 0.0, rng)
    for name in ("price", "qty"):
        params[f"{name}_w2"] *= 3.5
        params[f"{name}_b2"] *= 3.5
    assert select_action(forward(params, batch)[0], 0.0, rng) == base
    params["price_b2"] += 10.0
    assert select_action(forward(params, batch)[0], 0.0, rng) == base


def _batch(rng, B):
    return StateBatch(rng.normal(size=(B, 16)), rng.normal(size=(B, 5, 20)),
                      rng.normal(size=(B, 5, 3)))


def test_td_targets_terminal_and_gamma(rng):
    params = init_params(TINY, 0)
    nxt = _batch(rng, 2)
    y_p, y_q = td_targets(np.array([1.5, 1.5]), nxt, np.array([True, True]), params, 0.99)
    assert list(y_p) == [1.5, 1.5] and list(y_q) == [1.5, 1.5]
    y_p, y_q = td_targets(np.array([0.3, -0.2]), nxt, np.array([False, False]), params, 0.0)
    assert list(y_p) == [0.3, -0.2] and list(y_q) == [0.3, -0.2]


def test_td_target_bootstrap_value(rng):
    params = init_params(TINY, 0)
    params["price_w2"][:] = 0.0
    params["value_w2"][:] = 0.0
    params["value_b2"][:] = 2.0
    params["price_b2"][:] = 0.0
    y_p, _ = td_targets(np.array([0.0]), _batch(rng, 1), np.array([False]), params, 0.99)
    assert y_p[0] == pytest.approx(1.98, rel=1e-12)


def test_td_targets_bitwise_stable(rng):
    params = init_params(TINY, 4)
    nxt = _batch(rng, 8)
    r = rng.normal(size=8)
    d = rng.random(8) < 0.3
    a = td_targets(r, nxt, d, params, 0.9)
    b = td_targets(r, nxt, d, params, 0.9)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    assert np.all(a[0][d] == r[d])


def test_loss_values(rng):
    params = init_params(TINY, 0)
    states = _batch(rng, 1)
    out, _ = forward(params, states)
    actions = np.array([[1, 4]])
    y_p = out.q_price[:, 1].copy()
    y_q = out.q_qty[:, 4].copy()
    res = loss(params, states, actions, y_p, y_q, out.vol_pred.copy(), 1.0)
    assert res.loss == pytest.approx(0.0, abs=1e-20)
    res = loss(params, states, actions, y_p + 2.0, y_q, out.vol_pred + 1.0, 1.0, np.ones(1))
    assert res.loss == pytest.approx(3.0, rel=1e-12)
    res0 = loss(params, states, actions, y_p + 2.0, y_q, out.vol_pred + 1.0, 0.0)
    assert res0.loss == pytest.approx(2.0, rel=1e-12) and res0.loss == res0.loss_q


def test_loss_gradient_matches_finite_difference(rng):
    params = init_params(TINY, 6)
    states = _batch(rng, 4)
    actions = np.stack([rng.integers(5, size=4), rng.integers(11, size=4)], 1)
    y_p, y_q, yv = rng.normal(size=4), rng.normal(size=4), rng.random(4)
    w = rng.random(4)
    res = loss(params, states, actions, y_p, y_q, yv, 0.7, w)
    for name in ("qty_w1", "lob_w", "aux_b2", "macro_w1"):
        idx = tuple(int(rng.integers(s)) for s in params[name].shape)
        old = params[name][idx]
        params[name][idx] = old + 1e-6
        up = loss(params, states, actions, y_p, y_q, yv, 0.7, w).loss
        params[name][idx] = old - 1e-6
        down = loss(params, states, actions, y_p, y_q, yv, 0.7, w).loss
        params[name][idx] = old
        assert res.grads[name][idx] == pytest.approx((up - down) / 2e-6, rel=1e-4, abs=1e-8)


def test_vol_target():
    flat = day_from_closes([100.0] * 40)
    assert compute_vol_target(flat, 10, 30) == 0.0
    day = day_from_closes([100.0, 101.0, 99.99] + [99.99] * 5)
    assert compute_vol_target(day, 0, 2) == pytest.approx(1e-4, rel=1e-9)
    assert compute_vol_target(day, len(day) - 2, 30) == 0.0


def _filled_buffer(priorities, alpha):
    buf = ReplayBuffer(len(priorities), seq_len=1, alpha=alpha)
    env = TradingEnv(day_from_closes([100.0] * 40), EnvConfig(k=0))
    s = env.reset()
    for _ in priorities:
        buf.add(Transition(s, Action(0, 0), 0.0, s, False, 0.0))
    buf.update_priorities(np.arange(len(priorities)), np.array(priorities, dtype=float))
    return buf


def test_per_uniform_when_priorities_equal():
    buf = _filled_buffer([2.0] * 4, 0.6)
    idx, _, w = per_sample(buf, 4, np.random.default_rng(0), beta=0.5)
    np.testing.assert_allclose(buf.probabilities(), 0.25)
    np.testing.assert_allclose(w, 1.0)


def test_per_alpha_zero_is_uniform():
    buf = _filled_buffer([1.0, 50.0, 3.0], 0.0)
    np.testing.assert_allclose(buf.probabilities(), 1 / 3)


def test_per_proportional_frequency():
    buf = _filled_buffer([3.0, 1.0], 1.0)
    rng = np.random.default_rng(7)
    idx = np.concatenate([per_sample(buf, 1, rng)[0] for _ in range(10_000)])
    ratio = np.sum(idx == 0) / np.sum(idx == 1)
    assert ratio == pytest.approx(3.0, rel=0.1)


def test_per_weights_and_errors():
    buf = _filled_buffer([4.0, 1.0], 1.0)
    _, _, w = per_sample(buf, 2, np.random.default_rng(0), beta=1.0)
    assert w.max() == 1.0 and np.all(w > 0)
    with pytest.raises(ValueError, match="need"):
        per_sample(buf, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        buf.update_priorities(np.array([0]), np.array([0.0]))


def test_priority_floor_after_training(noisy_days):
    cfg = TrainConfig(epochs=1, augmentations=0, batch_size=4, per_eps=1e-3)
    res = train(noisy_days[:1], EnvConfig(k=1), cfg, TINY)
    buf = res.buffer
    assert res.n_updates > 0
    assert buf.priorities[:len(buf)].min() >= 1e-3
    assert np.all(buf.probabilities() > 0)


def test_transition_count_and_rewards_on_flat_day(flat_days):
    env_cfg = EnvConfig(fee_rate=0.0, k=2)
    cfg = TrainConfig(epochs=1, augmentations=0, epsilon_start=1.0, epsilon_end=1.0,
                      batch_size=8)
    rewards = []
    res = train(flat_days[:1], env_cfg, cfg, TINY,
                on_transition=lambda tr, r: rewards.append(tr.reward))
    assert res.n_transitions == len(flat_days[0]) - 29
    assert all(r == 0.0 for r in rewards)


def test_training_deterministic(flat_days):
    env_cfg = EnvConfig(k=1)
    cfg = TrainConfig(epochs=1, augmentations=1, batch_size=8, seed=3)
    a = train(flat_days, env_cfg, cfg, TINY)
    b = train(flat_days, env_cfg, cfg, TINY)
    assert dumps_checkpoint(a.params, {}) == dumps_checkpoint(b.params, {})
    assert a.log == b.log


def test_flat_prices_loss_goes_to_zero(flat_days):
    env_cfg = EnvConfig(fee_rate=0.0, k=1, hindsight_weight=0.1)
    cfg = TrainConfig(epochs=4, augmentations=1, batch_size=16, lr=1e-3)
    rewards = []
    res = train(flat_days, env_cfg, cfg, TINY,
                on_transition=lambda tr, r: rewards.append(tr.reward))
    assert not any(rewards)
    losses = [row["loss_q"] for row in res.log]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.05 * losses[0]


def test_plain_branching_dqn_runs(noisy_days):
    env_cfg = EnvConfig(hindsight_weight=0.0, k=1)
    cfg = TrainConfig(epochs=1, eta=0.0, batch_size=8, augmentations=0)
    res = train(noisy_days[:1], env_cfg, cfg, TINY)
    assert np.isfinite(res.log[0]["loss_q"])
    assert all(np.isfinite(v).all() for v in res.params.values())


def test_train_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        train([], EnvConfig(), TrainConfig())
