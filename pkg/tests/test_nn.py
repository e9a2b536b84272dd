import math
from types import SimpleNamespace

import numpy as np
import pytest

from ats2s import nn
from ats2s import tensor as T
from ats2s.optim import grad_check
from ats2s.tensor import Tensor


def tiny_config(n=3, p=4, a=4, predictor_hidden=(4,), feature_set="both"):
    return SimpleNamespace(
        n_sensors=n,
        hidden=p,
        attention_width=a,
        predictor_hidden=tuple(predictor_hidden),
        feature_set=feature_set,
    )


def scalar_lstm_oracle(x, h_prev, c_prev, w=1.0, u=1.0, b=0.0):
    """Independent plain-float LSTM step for the 1x1 case."""
    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    pre = w * x + u * h_prev + b
    i = sig(pre)
    f = sig(pre)
    o = sig(pre)
    g = math.tanh(pre)
    c = f * c_prev + i * g
    h = o * math.tanh(c)
    return h, c


def const_lstm(input_dim, hidden, value, dtype=np.float64):
    def filled(shape):
        return Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)

    def zero(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    return nn.LstmParams(
        W_i=filled((input_dim, hidden)), W_f=filled((input_dim, hidden)),
        W_o=filled((input_dim, hidden)), W_c=filled((input_dim, hidden)),
        U_i=filled((hidden, hidden)), U_f=filled((hidden, hidden)),
        U_o=filled((hidden, hidden)), U_c=filled((hidden, hidden)),
        b_i=zero((hidden,)), b_f=zero((hidden,)), b_o=zero((hidden,)),
        b_c=zero((hidden,)),
    )


# ---- LSTM cell ---------------------------------------------------------------

def test_cell_all_ones_scalar_case():
    params = const_lstm(1, 1, 1.0)
    x = Tensor(np.array([[1.0]]), dtype=np.float64)
    h0 = T.zeros((1, 1), dtype=np.float64)
    c0 = T.zeros((1, 1), dtype=np.float64)
    h, c = nn.lstm_cell_step(x, h0, c0, params)
    want_h, want_c = scalar_lstm_oracle(1.0, 0.0, 0.0)
    assert c.data[0, 0] == pytest.approx(want_c, abs=1e-12)
    assert h.data[0, 0] == pytest.approx(want_h, abs=1e-12)
    # frozen from the oracle: c = sigmoid(1)*tanh(1), h = sigmoid(1)*tanh(c)
    assert want_c == pytest.approx(0.5567699411, abs=1e-9)
    assert want_h == pytest.approx(0.3696063529, abs=1e-9)


def test_cell_zero_everything_stays_zero():
    params = const_lstm(2, 3, 0.0)
    x = T.zeros((1, 2), dtype=np.float64)
    h, c = nn.lstm_cell_step(x, T.zeros((1, 3), np.float64), T.zeros((1, 3), np.float64), params)
    assert np.array_equal(h.data, np.zeros((1, 3)))
    assert np.array_equal(c.data, np.zeros((1, 3)))


def test_cell_two_steps_match_scalar_oracle():
    params = const_lstm(1, 1, 1.0)
    h = T.zeros((1, 1), np.float64)
    c = T.zeros((1, 1), np.float64)
    oh, oc = 0.0, 0.0
    for x_val in (1.0, -0.5, 0.25):
        x = Tensor(np.array([[x_val]]), dtype=np.float64)
        h, c = nn.lstm_cell_step(x, h, c, params)
        oh, oc = scalar_lstm_oracle(x_val, oh, oc)
        assert h.data[0, 0] == pytest.approx(oh, abs=1e-12)
        assert c.data[0, 0] == pytest.approx(oc, abs=1e-12)


def test_saturated_forget_gate_preserves_cell_state():
    rng = np.random.default_rng(2)
    params = const_lstm(2, 3, 0.0)
    for name, t in params.tensors():
        if name.startswith(("W_", "U_")):
            t.data = rng.normal(scale=0.1, size=t.shape)
    params.b_f.data = np.full(3, 100.0)
    params.b_i.data = np.full(3, -100.0)
    c_prev = Tensor(rng.normal(size=(1, 3)), dtype=np.float64)
    x = Tensor(rng.normal(size=(1, 2)), dtype=np.float64)
    h_prev = Tensor(rng.normal(size=(1, 3)), dtype=np.float64)
    _, c = nn.lstm_cell_step(x, h_prev, c_prev, params)
    assert np.allclose(c.data, c_prev.data, atol=1e-8)


def test_hidden_state_strictly_inside_unit_box():
    rng = np.random.default_rng(9)
    for _ in range(50):
        n, p, batch = (int(rng.integers(1, 5)) for _ in range(3))
        params = const_lstm(n, p, 0.0)
        for name, t in params.tensors():
            t.data = rng.normal(scale=2.0, size=t.shape)
        x = Tensor(rng.normal(size=(batch, n)) * 5, dtype=np.float64)
        h = Tensor(rng.uniform(-0.9, 0.9, size=(batch, p)), dtype=np.float64)
        c = Tensor(rng.normal(size=(batch, p)), dtype=np.float64)
        h2, _ = nn.lstm_cell_step(x, h, c, params)
        assert (np.abs(h2.data) < 1.0).all()


# ---- encoder -----------------------------------------------------------------

def test_encode_shapes_and_single_step_equivalence():
    rng = np.random.default_rng(4)
    params = const_lstm(3, 5, 0.0)
    for _, t in params.tensors():
        t.data = rng.normal(scale=0.3, size=t.shape)
    xs = [Tensor(rng.normal(size=(2, 3)), dtype=np.float64) for _ in range(7)]
    H, C = nn.encode(xs, params)
    assert len(H) == len(C) == 7
    assert all(h.shape == (2, 5) for h in H)
    # a length-1 sequence is exactly one step from zeros
    H1, C1 = nn.encode(xs[:1], params)
    h_direct, c_direct = nn.lstm_cell_step(
        xs[0], T.zeros((2, 5), np.float64), T.zeros((2, 5), np.float64), params)
    assert np.array_equal(H1[0].data, h_direct.data)
    assert np.array_equal(C1[0].data, c_direct.data)


def test_encode_rejects_empty_sequence():
    with pytest.raises(ValueError):
        nn.encode([], const_lstm(2, 2, 0.0))


# ---- attention ----------------------------------------------------------------

def make_attention(p, a, rng, scale=0.5, dtype=np.float64):
    return nn.AttentionParams(
        W_s=Tensor(rng.normal(scale=scale, size=(p, a)), dtype=dtype, requires_grad=True),
        W_h=Tensor(rng.normal(scale=scale, size=(p, a)), dtype=dtype, requires_grad=True),
        b_a=Tensor(rng.normal(scale=scale, size=(a,)), dtype=dtype, requires_grad=True),
        v=Tensor(rng.normal(scale=scale, size=(a, 1)), dtype=dtype, requires_grad=True),
    )


def test_attention_known_scores():
    # engineered so the two alignment scores are exactly 1 and 3:
    # score_j = 10 * tanh(atanh(0.1 * (j+1)))
    params = nn.AttentionParams(
        W_s=Tensor(np.zeros((1, 1)), dtype=np.float64),
        W_h=Tensor(np.ones((1, 1)), dtype=np.float64),
        b_a=Tensor(np.zeros(1), dtype=np.float64),
        v=Tensor(np.array([[10.0]]), dtype=np.float64),
    )
    H = [
        Tensor(np.array([[math.atanh(0.1)]]), dtype=np.float64),
        Tensor(np.array([[math.atanh(0.3)]]), dtype=np.float64),
    ]
    s_prev = T.zeros((1, 1), np.float64)
    weights = nn.attention_weights(s_prev, H, params)
    e1, e3 = math.exp(1.0), math.exp(3.0)
    assert weights.data[0, 0] == pytest.approx(e1 / (e1 + e3), abs=1e-9)
    assert weights.data[0, 1] == pytest.approx(e3 / (e1 + e3), abs=1e-9)
    # frozen: softmax([1, 3]) = [0.1192029, 0.8807971]
    assert weights.data[0, 0] == pytest.approx(0.11920292, abs=1e-7)
    assert weights.data[0, 1] == pytest.approx(0.88079708, abs=1e-7)


def test_identical_encoder_states_give_uniform_attention():
    rng = np.random.default_rng(6)
    params = make_attention(4, 3, rng)
    col = rng.normal(size=(2, 4))
    H = [Tensor(col.copy(), dtype=np.float64) for _ in range(5)]
    weights = nn.attention_weights(Tensor(rng.normal(size=(2, 4)), dtype=np.float64), H, params)
    assert np.allclose(weights.data, 0.2, atol=1e-12)


def test_attention_weights_are_a_distribution():
    rng = np.random.default_rng(8)
    for _ in range(40):
        p = int(rng.integers(1, 6))
        a = int(rng.integers(1, 6))
        steps = int(rng.integers(1, 9))
        batch = int(rng.integers(1, 4))
        params = make_attention(p, a, rng, scale=2.0)
        H = [Tensor(rng.normal(size=(batch, p)) * 3, dtype=np.float64) for _ in range(steps)]
        s_prev = Tensor(rng.normal(size=(batch, p)) * 3, dtype=np.float64)
        w = nn.attention_weights(s_prev, H, params)
        assert w.shape == (batch, steps)
        assert np.allclose(w.data.sum(axis=1), 1.0, atol=1e-9)
        assert (w.data > 0).all() and (w.data < 1.0 + 1e-12).all()


def test_context_selects_column_under_one_hot():
    rng = np.random.default_rng(10)
    H = [Tensor(rng.normal(size=(2, 3)), dtype=np.float64) for _ in range(4)]
    one_hot = np.zeros((2, 4))
    one_hot[:, 2] = 1.0
    z = nn.context_vector(Tensor(one_hot, dtype=np.float64), H)
    assert np.allclose(z.data, H[2].data, atol=1e-12)


def test_context_uniform_weights_give_mean():
    rng = np.random.default_rng(12)
    H = [Tensor(rng.normal(size=(1, 3)), dtype=np.float64) for _ in range(5)]
    uniform = Tensor(np.full((1, 5), 0.2), dtype=np.float64)
    z = nn.context_vector(uniform, H)
    mean = np.mean([h.data for h in H], axis=0)
    assert np.allclose(z.data, mean, atol=1e-12)


def test_context_stays_in_componentwise_envelope():
    rng = np.random.default_rng(14)
    for _ in range(30):
        steps = int(rng.integers(1, 7))
        H = [Tensor(rng.normal(size=(2, 4)), dtype=np.float64) for _ in range(steps)]
        raw = rng.random((2, steps)) + 1e-3
        weights = Tensor(raw / raw.sum(axis=1, keepdims=True), dtype=np.float64)
        z = nn.context_vector(weights, H)
        stack = np.stack([h.data for h in H])  # (steps, 2, 4)
        assert (z.data <= stack.max(axis=0) + 1e-12).all()
        assert (z.data >= stack.min(axis=0) - 1e-12).all()


def test_context_rejects_weight_count_mismatch():
    H = [T.zeros((1, 2), np.float64)]
    with pytest.raises(ValueError):
        nn.context_vector(T.zeros((1, 3), np.float64), H)


# ---- decoder and predictor -----------------------------------------------------

def test_decode_step_zero_params_zero_output():
    n, p = 3, 4
    dec = nn.DecoderParams(
        cell=const_lstm(n + p, p, 0.0),
        out_W=T.zeros((p, n), np.float64),
        out_b=T.zeros((n,), np.float64),
    )
    rng = np.random.default_rng(1)
    s, c, y = nn.decode_step(
        Tensor(rng.normal(size=(2, n)), dtype=np.float64),
        Tensor(rng.normal(size=(2, p)), dtype=np.float64),
        T.zeros((2, p), np.float64), T.zeros((2, p), np.float64), dec)
    assert y.shape == (2, n)
    assert np.array_equal(y.data, np.zeros((2, n)))
    assert np.array_equal(s.data, np.zeros((2, p)))


def test_predictor_hand_case():
    # plain-float oracle: relu(relu([1,2]W1+b1)W2+b2)
    w1 = [[1.0, -1.0], [1.0, 1.0]]
    b1 = [0.5, -0.5]
    w2 = [[2.0], [-1.0]]
    b2 = [0.25]
    f = [1.0, 2.0]
    hidden = [max(0.0, f[0] * w1[0][j] + f[1] * w1[1][j] + b1[j]) for j in range(2)]
    out = max(0.0, hidden[0] * w2[0][0] + hidden[1] * w2[1][0] + b2[0])
    assert out == 6.75  # frozen by hand: relu([3.5, 0.5]) -> 3.5*2 - 0.5 + 0.25

    params = nn.PredictorParams(layers=[
        (Tensor(np.array(w1), dtype=np.float64), Tensor(np.array(b1), dtype=np.float64)),
        (Tensor(np.array(w2), dtype=np.float64), Tensor(np.array(b2), dtype=np.float64)),
    ])
    got = nn.predictor_forward(Tensor(np.array([f]), dtype=np.float64), params)
    assert got.data[0, 0] == pytest.approx(out, abs=1e-12)


def test_rul_estimate_never_negative():
    rng = np.random.default_rng(16)
    for _ in range(30):
        p = int(rng.integers(1, 5))
        params = nn.PredictorParams(layers=[
            (Tensor(rng.normal(size=(2 * p, 3)), dtype=np.float64),
             Tensor(rng.normal(size=(3,)), dtype=np.float64)),
            (Tensor(rng.normal(size=(3, 1)), dtype=np.float64),
             Tensor(rng.normal(size=(1,)), dtype=np.float64)),
        ])
        h = Tensor(rng.normal(size=(4, p)) * 3, dtype=np.float64)
        s = Tensor(rng.normal(size=(4, p)) * 3, dtype=np.float64)
        out = nn.predict_rul(h, s, params)
        assert out.shape == (4, 1)
        assert (out.data >= 0).all()


# ---- initialization -------------------------------------------------------------

def test_init_is_deterministic_and_bounded():
    cfg = tiny_config(n=5, p=6, a=4, predictor_hidden=(7, 3))
    a = nn.init_params(cfg, np.random.default_rng(33))
    b = nn.init_params(cfg, np.random.default_rng(33))
    names_a = [name for name, _ in a.tensors()]
    assert len(names_a) == len(set(names_a))
    for (name, ta), (_, tb) in zip(a.tensors(), b.tensors()):
        assert np.array_equal(ta.data, tb.data), name
        assert ta.requires_grad
        if name.split(".")[-1].startswith("b"):
            assert np.array_equal(ta.data, np.zeros_like(ta.data)), name
        else:
            fan_in = ta.shape[0]
            assert (np.abs(ta.data) <= 1.0 / math.sqrt(fan_in)).all(), name


def test_init_shapes_follow_config():
    cfg = tiny_config(n=3, p=4, a=5, predictor_hidden=(6,), feature_set="both")
    params = nn.init_params(cfg, np.random.default_rng(0))
    assert params.encoder.W_i.shape == (3, 4)
    assert params.encoder.U_i.shape == (4, 4)
    assert params.attention.W_s.shape == (4, 5)
    assert params.attention.v.shape == (5, 1)
    assert params.decoder.cell.W_i.shape == (3 + 4, 4)
    assert params.decoder.out_W.shape == (4, 3)
    assert [w.shape for w, _ in params.predictor.layers] == [(8, 6), (6, 1)]


def test_feature_set_changes_predictor_input_width():
    for fs, width in (("encoder", 4), ("decoder", 4), ("both", 8)):
        cfg = tiny_config(n=2, p=4, feature_set=fs)
        params = nn.init_params(cfg, np.random.default_rng(1))
        assert params.predictor.layers[0][0].shape[0] == width


def test_astype_converts_every_tensor():
    cfg = tiny_config()
    params = nn.init_params(cfg, np.random.default_rng(2))
    wide = params.astype(np.float64)
    for (name, t32), (_, t64) in zip(params.tensors(), wide.tensors()):
        assert t64.dtype == np.float64, name
        assert np.allclose(t64.data, t32.data, atol=1e-7)
        assert t64.requires_grad


# ---- gradients through the blocks ------------------------------------------------

def test_cell_gradients_check_out():
    rng = np.random.default_rng(21)
    params = const_lstm(2, 3, 0.0)
    for _, t in params.tensors():
        t.data = rng.normal(scale=0.5, size=t.shape)
    x = Tensor(rng.normal(size=(2, 2)), dtype=np.float64)
    h0 = Tensor(rng.normal(size=(2, 3)), dtype=np.float64)
    c0 = Tensor(rng.normal(size=(2, 3)), dtype=np.float64)

    def fn():
        h, c = nn.lstm_cell_step(x, h0, c0, params)
        return T.add(h.sum(), c.sum())

    assert grad_check(fn, [t for _, t in params.tensors()]) < 1e-4


def test_attention_gradients_check_out():
    rng = np.random.default_rng(22)
    params = make_attention(3, 4, rng)
    H = [Tensor(rng.normal(size=(2, 3)), dtype=np.float64) for _ in range(5)]
    s_prev = Tensor(rng.normal(size=(2, 3)), dtype=np.float64)
    target = Tensor(rng.normal(size=(2, 3)), dtype=np.float64)

    def fn():
        w = nn.attention_weights(s_prev, H, params)
        z = nn.context_vector(w, H)
        return T.mse(z, target)

    leaves = [t for _, t in params.tensors()]
    assert grad_check(fn, leaves) < 1e-4
