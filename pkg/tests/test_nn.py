import math

import numpy as np
import pytest

from slm.nn import autograd as ag
from slm.nn.gradcheck import InvalidEpsilon, grad_check
from slm.nn.layers import (EmptySequence, cross_entropy, init_lstm, init_transformer, lstm_forward, lstm_step,
                           softmax, transformer_layer)
from slm.nn.optim import AdamState, adam_step


def tensors(d):
    return {k: ag.Tensor(v) for k, v in d.items()}


# --------------------------------------------------------------------------- LSTM

def scalar_lstm(xs, Wx, Wh, b):
    """Element-by-element LSTM recurrence with [i, f, g, o] gate blocks."""
    H = Wh.shape[0]
    h, c = [0.0] * H, [0.0] * H
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))  # noqa: E731
    for x in xs:
        z = [b[j] + sum(x[k] * Wx[k, j] for k in range(len(x))) + sum(h[k] * Wh[k, j] for k in range(H))
             for j in range(4 * H)]
        nc, nh = [], []
        for u in range(H):
            i, f, g, o = sig(z[u]), sig(z[H + u]), math.tanh(z[2 * H + u]), sig(z[3 * H + u])
            nc.append(f * c[u] + i * g)
            nh.append(o * math.tanh(nc[-1]))
        h, c = nh, nc
    return np.array(h)


def test_lstm_matches_scalar_oracle(rng):
    p = init_lstm(rng, "lstm", 3, 4, 1)
    p["lstm.0.b"] += rng.normal(0, 0.5, 16)
    xs = [rng.normal(size=3) for _ in range(5)]
    got = lstm_forward(xs, tensors(p), 1).data
    want = scalar_lstm(xs, p["lstm.0.Wx"], p["lstm.0.Wh"], p["lstm.0.b"])
    np.testing.assert_allclose(got, want, atol=1e-6, rtol=0)


def test_lstm_two_layers_match_stacked_oracle(rng):
    p = init_lstm(rng, "lstm", 3, 4, 2)
    xs = [rng.normal(size=3) for _ in range(4)]
    got = lstm_forward(xs, tensors(p), 2).data
    # the second layer consumes the first layer's hidden sequence
    hs = [scalar_lstm(xs[:t + 1], p["lstm.0.Wx"], p["lstm.0.Wh"], p["lstm.0.b"]) for t in range(len(xs))]
    want = scalar_lstm(hs, p["lstm.1.Wx"], p["lstm.1.Wh"], p["lstm.1.b"])
    np.testing.assert_allclose(got, want, atol=1e-6, rtol=0)


def test_lstm_zero_weights_give_zero_state(rng):
    p = {k: np.zeros_like(v) for k, v in init_lstm(rng, "lstm", 3, 4, 1).items()}
    out = lstm_forward([rng.normal(size=3) for _ in range(3)], tensors(p), 1).data
    assert np.all(out == 0.0)


def test_lstm_single_step(rng):
    p = tensors(init_lstm(rng, "lstm", 3, 4, 1))
    x = rng.normal(size=3)
    hs, _ = lstm_step(p, "lstm", ag.Tensor(x[None]), [ag.Tensor(np.zeros((1, 4)))], [ag.Tensor(np.zeros((1, 4)))])
    np.testing.assert_allclose(lstm_forward([x], p, 1).data, hs[0].data[0])


def test_lstm_empty_sequence(rng):
    with pytest.raises(EmptySequence):
        lstm_forward([], tensors(init_lstm(rng, "lstm", 3, 4, 1)), 1)


def test_forget_bias_init(rng):
    b = init_lstm(rng, "lstm", 3, 4, 1)["lstm.0.b"]
    assert np.all(b[4:8] == 1.0) and np.all(b[:4] == 0.0) and np.all(b[8:] == 0.0)


# --------------------------------------------------------------------------- transformer

def _tf(rng, dim=8, ffn=16):
    p = init_transformer(rng, "tf", dim, ffn, 1)
    for k in p:
        p[k] = p[k] + rng.normal(0, 0.1, p[k].shape)
    return {k.replace("tf.0", "L"): ag.Tensor(v) for k, v in p.items()}


def test_transformer_permutation_equivariant(rng):
    p = _tf(rng)
    X = rng.normal(size=(1, 6, 8))
    perm = rng.permutation(6)
    Z = transformer_layer(p, "L", ag.Tensor(X), None, heads=2).data
    Zp = transformer_layer(p, "L", ag.Tensor(X[:, perm]), None, heads=2).data
    np.testing.assert_allclose(Zp, Z[:, perm], atol=1e-12)


def test_transformer_padding_is_ignored(rng):
    p = _tf(rng)
    X = rng.normal(size=(1, 4, 8))
    padded = np.concatenate([X, rng.normal(size=(1, 3, 8))], axis=1)
    mask = np.array([[True] * 4 + [False] * 3])
    Z = transformer_layer(p, "L", ag.Tensor(X), None, heads=2).data
    Zp = transformer_layer(p, "L", ag.Tensor(padded), mask, heads=2).data
    np.testing.assert_allclose(Zp[:, :4], Z, atol=1e-12)


def test_attention_weights(rng):
    p = _tf(rng)
    rec = []
    transformer_layer(p, "L", ag.Tensor(rng.normal(size=(1, 1, 8))), None, heads=2, record=rec)
    assert np.allclose(rec[0][1], 1.0)
    rec = []
    mask = np.array([[True] * 5, [True] * 3 + [False] * 2])
    transformer_layer(p, "L", ag.Tensor(rng.normal(size=(2, 5, 8))), mask, heads=2, record=rec)
    A = rec[0][1]
    np.testing.assert_allclose(A.sum(-1), 1.0, atol=1e-12)
    assert np.all(A[1, :, :, 3:] == 0.0)


# --------------------------------------------------------------------------- softmax, CE, dropout

def test_softmax_and_cross_entropy(rng):
    x = rng.normal(size=(4, 7)) * 10
    p = softmax(x)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)
    assert np.all(p > 0)
    losses = [cross_entropy(np.array([q, 1 - q]), 0) for q in (0.1, 0.3, 0.5, 0.9)]
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_masked_log_softmax(rng):
    x = ag.Tensor(rng.normal(size=(3, 5)))
    mask = np.array([[1, 1, 0, 1, 0], [1, 0, 0, 0, 0], [1, 1, 1, 1, 1]], bool)
    y = ag.masked_log_softmax(x, mask).data
    np.testing.assert_allclose(np.exp(y).sum(-1), 1.0, atol=1e-12)
    assert np.all(np.isneginf(y[~mask]))


def test_dropout(rng):
    x = ag.Tensor(rng.normal(size=(50, 40)))
    assert ag.dropout(x, 0.0, rng, True) is x
    assert ag.dropout(x, 0.5, rng, False) is x
    y = ag.dropout(ag.Tensor(np.ones((400, 400))), 0.25, rng, True).data
    assert set(np.unique(y)) <= {0.0, 1.0 / 0.75}
    assert abs(y.mean() - 1.0) < 0.02


def test_non_finite_guard():
    with pytest.raises(ag.NonFiniteError), np.errstate(divide="ignore"):
        ag.log(ag.Tensor(np.array([0.0, 1.0])))


# --------------------------------------------------------------------------- Adam

def test_adam_first_step():
    theta = {"w": np.array([0.0])}
    st = AdamState(lr=0.1)
    adam_step(theta, {"w": np.array([0.5])}, st)
    # hand-applied: m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25 -> step 0.1 * 0.5 / (0.5 + 1e-8)
    assert theta["w"][0] == pytest.approx(-0.1 * 0.5 / (0.5 + 1e-8), abs=1e-15)
    assert theta["w"][0] == pytest.approx(-0.1, abs=1e-7)


def test_adam_zero_grad_unchanged(rng):
    theta = {"w": rng.normal(size=(3, 2))}
    before = theta["w"].copy()
    adam_step(theta, {"w": np.zeros((3, 2))}, AdamState())
    np.testing.assert_array_equal(theta["w"], before)


def test_adam_schedule():
    st = AdamState(lr=1e-3, decay_factor=0.95, decay_every=20000)
    assert st.effective_lr(19999) == 1e-3
    assert st.effective_lr(20000) == pytest.approx(0.95e-3)
    assert st.effective_lr(40000) == pytest.approx(0.95 ** 2 * 1e-3)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, AdamState())


# --------------------------------------------------------------------------- gradient checks

def test_grad_check_quadratic(rng):
    theta = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=5)}
    err = grad_check(lambda p: ag.scale(ag.sum_(p["a"] * p["a"]) + ag.sum_(p["b"] * p["b"]), 0.5), theta)
    assert err < 1e-9


def test_grad_check_rejects_zero_eps():
    with pytest.raises(InvalidEpsilon):
        grad_check(lambda p: ag.sum_(p["a"]), {"a": np.ones(2)}, eps=0.0)


def test_grad_check_catches_wrong_gradient():
    def bad_square(a):
        return ag._make(a.data ** 2, (a,), lambda g: (g * a.data,))  # missing factor 2

    err = grad_check(lambda p: ag.sum_(bad_square(p["a"])), {"a": np.array([1.0, 2.0])})
    assert err > 0.3


_M = np.array([[1, 0, 1, 1]] * 3, bool)

OPS = {
    "matmul": lambda p: ag.sum_(ag.tanh(p["x"] @ p["w"])),
    "batched_matmul": lambda p: ag.sum_(ag.tanh(p["x3"] @ ag.transpose(p["x3"], (0, 2, 1)))),
    "sigmoid_exp": lambda p: ag.sum_(ag.sigmoid(p["x"]) * ag.exp(ag.scale(p["x"], 0.3))),
    "log_softmax": lambda p: ag.sum_(ag.masked_log_softmax(p["x"], _M)[_M] * p["c"][_M]),
    "softmax": lambda p: ag.sum_(ag.masked_softmax(p["x"]) * p["c"]),
    "layer_norm": lambda p: ag.sum_(ag.layer_norm(p["x"], p["g"], p["b"]) * p["c"]),
    "take": lambda p: ag.sum_(ag.tanh(ag.take(p["x"], np.array([[0, 2], [2, 1]])))),
    "scatter_add": lambda p: ag.sum_(ag.tanh(ag.scatter_add(p["x"], (np.array([0, 1, 2, 0]), np.array([1, 1, 3, 0])),
                                                            (2, 3), (np.array([0, 0, 1, 1]), np.array([2, 2, 0, 1]))))),
    "max_pool": lambda p: ag.sum_(ag.max_pool(p["x3"], np.array([[1, 1, 0], [1, 0, 0]], bool)) * p["c3"]),
    "lstm_gates": lambda p: ag.sum_(ag.lstm_gates(p["z"], p["x"]) * p["cz"]),
    "concat_getitem": lambda p: ag.sum_(ag.tanh(ag.concat([p["x"], p["x"][:, :2]], axis=1))),
    "where": lambda p: ag.sum_(ag.where(np.array([[1, 0, 1, 0]] * 3, bool), p["x"], ag.scale(p["x"], -2.0))
                               * p["c"]),
}


@pytest.mark.parametrize("op", sorted(OPS))
def test_op_gradients(op, rng):
    params = {"x": rng.normal(size=(3, 4)), "w": rng.normal(size=(4, 2)), "c": rng.normal(size=(3, 4)),
              "g": rng.normal(size=4), "b": rng.normal(size=4), "x3": rng.normal(size=(2, 3, 4)),
              "c3": rng.normal(size=(2, 4)), "z": rng.normal(size=(3, 16)), "cz": rng.normal(size=(3, 8))}
    assert grad_check(OPS[op], params, eps=1e-5) < 1e-6


def test_transformer_and_lstm_gradients(rng):
    p = {k.replace("tf.0", "L"): v + rng.normal(0, 0.2, v.shape) for k, v in init_transformer(rng, "tf", 4, 6, 1).items()}
    p.update(init_lstm(rng, "lstm", 4, 4, 2))
    p["X"] = rng.normal(size=(1, 3, 4))
    mask = np.array([[True, True, False]])

    def loss(t):
        Z = transformer_layer(t, "L", t["X"], mask, heads=2)
        h = lstm_forward([Z[0, 0], Z[0, 1]], t, 2)
        return ag.sum_(ag.tanh(h))

    assert grad_check(loss, p, eps=1e-5, oracle_dtype=np.longdouble) < 1e-6
