import numpy as np
import pytest

from intraday_rl.neural import (AdamState, BranchingQNetwork, NetworkConfig, StateBatch,
                                adam_step, backward, copy_params, dumps_checkpoint, forward,
                                init_params, loads_checkpoint, zeros_like_params)

SMALL = NetworkConfig(macro_hidden=8, macro_embed=8, lstm_hidden=8, head_hidden=8)


def random_batch(rng, B=3, T=5):
    return StateBatch(rng.normal(size=(B, 16)), rng.normal(size=(B, T, 20)),
                      rng.normal(size=(B, T, 3)))


def scalar_objective(params, batch, wp, wq, wv):
    out, _ = forward(params, batch)
    return (out.q_price * wp).sum() + (out.q_qty * wq).sum() + (out.vol_pred * wv).sum()


def test_gradients_match_finite_differences(rng):
    params = init_params(SMALL, 7)
    batch = random_batch(rng)
    wp, wq, wv = rng.normal(size=(3, 5)), rng.normal(size=(3, 11)), rng.normal(size=3)
    _, tape = forward(params, batch)
    grads = backward(params, tape, wp, wq, wv)
    names = list(params)
    for _ in range(300):
        name = names[rng.integers(len(names))]
        idx = tuple(int(rng.integers(s)) for s in params[name].shape)
        old = params[name][idx]
        params[name][idx] = old + 1e-5
        up = scalar_objective(params, batch, wp, wq, wv)
        params[name][idx] = old - 1e-5
        down = scalar_objective(params, batch, wp, wq, wv)
        params[name][idx] = old
        fd = (up - down) / 2e-5
        assert grads[name][idx] == pytest.approx(fd, rel=1e-4, abs=1e-7), (name, idx)


def test_zero_upstream_gives_zero_gradients(rng):
    params = init_params(SMALL, 1)
    batch = random_batch(rng)
    _, tape = forward(params, batch)
    grads = backward(params, tape, np.zeros((3, 5)), np.zeros((3, 11)), np.zeros(3))
    assert all(not g.any() for g in grads.values())


def test_duplicated_state_doubles_gradient(rng):
    params = init_params(SMALL, 2)
    one = random_batch(rng, B=1)
    two = StateBatch(np.repeat(one.macro, 2, 0), np.repeat(one.lob_seq, 2, 0),
                     np.repeat(one.private_seq, 2, 0))
    wp, wq, wv = rng.normal(size=(1, 5)), rng.normal(size=(1, 11)), rng.normal(size=1)
    g1 = backward(params, forward(params, one)[1], wp, wq, wv)
    g2 = backward(params, forward(params, two)[1], np.repeat(wp, 2, 0),
                  np.repeat(wq, 2, 0), np.repeat(wv, 2))
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)


def test_aggregation_identity(rng):
    for seed in range(50):
        out, _ = forward(init_params(SMALL, seed), random_batch(rng))
        assert np.abs(out.q_price.mean(axis=1) - out.v).max() < 1e-9
        assert np.abs(out.q_qty.mean(axis=1) - out.v).max() < 1e-9


def test_constant_advantage_gives_value(rng):
    params = init_params(SMALL, 3)
    params["price_w2"][:] = 0.0
    params["price_b2"][:] = 0.7
    out, _ = forward(params, random_batch(rng))
    np.testing.assert_allclose(out.q_price, np.repeat(out.v[:, None], 5, 1), atol=1e-12)


def test_zero_params_give_zero_outputs(rng):
    params = zeros_like_params(init_params(SMALL, 0))
    out, _ = forward(params, random_batch(rng))
    assert not out.v.any() and not out.q_price.any() and not out.q_qty.any()


def test_shape_mismatch_rejected(rng):
    params = init_params(SMALL, 0)
    bad = StateBatch(rng.normal(size=(2, 15)), rng.normal(size=(2, 3, 20)),
                     rng.normal(size=(2, 3, 3)))
    with pytest.raises(ValueError, match="macro"):
        forward(params, bad)


def test_backward_requires_forward():
    net = BranchingQNetwork(SMALL, seed=0)
    with pytest.raises(RuntimeError, match="without"):
        net.backward(np.zeros((1, 5)), np.zeros((1, 11)), np.zeros(1))


def test_forward_is_pure(rng):
    params = init_params(SMALL, 5)
    snapshot = copy_params(params)
    batch = random_batch(rng)
    a, _ = forward(params, batch)
    b, _ = forward(params, batch)
    assert a.q_price.tobytes() == b.q_price.tobytes()
    assert all(np.array_equal(params[k], snapshot[k]) for k in params)


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState(lr=0.1)
    adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_size():
    # m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps)
    params = {"w": np.array([0.0])}
    state = AdamState(lr=0.1)
    adam_step(params, {"w": np.array([1.0])}, state)
    assert params["w"][0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)
    adam_step(params, {"w": np.array([1.0])}, state)
    assert params["w"][0] == pytest.approx(-0.2, rel=1e-6)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())


def test_adam_deterministic(rng):
    def run():
        params = init_params(SMALL, 11)
        state = AdamState(lr=1e-3)
        g_rng = np.random.default_rng(4)
        for _ in range(5):
            grads = {k: g_rng.normal(size=v.shape) for k, v in params.items()}
            adam_step(params, grads, state)
        return dumps_checkpoint(params, {})
    assert run() == run()


def test_checkpoint_roundtrip():
    params = init_params(SMALL, 9)
    meta = {"seed": 9, "config": {"a": 1}}
    data = dumps_checkpoint(params, meta)
    back, meta2 = loads_checkpoint(data)
    assert meta2 == meta and list(back) == list(params)
    assert all(np.array_equal(back[k], params[k]) for k in params)
    assert dumps_checkpoint(back, meta2) == data
    with pytest.raises(ValueError, match="magic"):
        loads_checkpoint(b"nope" + data)
