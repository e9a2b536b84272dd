"""Model building blocks: LSTM cell, additive attention, decoder, RUL head.

Everything here works on batches of row vectors: activations are (B, d)
tensors and a sequence is a list of T such tensors, one per cycle. A single
window is just a batch of one.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class LstmParams:
    """One cell's weights: W_* map the input, U_* map the previous hidden state."""

    W_i: Tensor
    W_f: Tensor
    W_o: Tensor
    W_c: Tensor
    U_i: Tensor
    U_f: Tensor
    U_o: Tensor
    U_c: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_c: Tensor

    def tensors(self, prefix=""):
        return [(prefix + f.name, getattr(self, f.name)) for f in fields(self)]


@dataclass
class AttentionParams:
    W_s: Tensor  # (p, a) projects the decoder state
    W_h: Tensor  # (p, a) projects an encoder hidden state
    b_a: Tensor  # (a,)
    v: Tensor    # (a, 1) collapses the tanh layer to one score

    def tensors(self, prefix=""):
        return [(prefix + f.name, getattr(self, f.name)) for f in fields(self)]


@dataclass
class DecoderParams:
    cell: LstmParams      # input dim n + p: previous frame next to the context
    out_W: Tensor         # (p, n)
    out_b: Tensor         # (n,)

    def tensors(self, prefix=""):
        out = self.cell.tensors(prefix + "cell.")
        out.append((prefix + "out_W", self.out_W))
        out.append((prefix + "out_b", self.out_b))
        return out


@dataclass
class PredictorParams:
    """Fully connected stack; ReLU follows every layer, the last one included,
    which pins the RUL estimate to be non-negative."""

    layers: list  # [(W, b), ...] ending in an output width of 1

    def tensors(self, prefix=""):
        out = []
        for k, (w, b) in enumerate(self.layers):
            out.append((prefix + f"fc{k}_W", w))
            out.append((prefix + f"fc{k}_b", b))
        return out


@dataclass
class ModelParameters:
    encoder: LstmParams
    attention: AttentionParams
    decoder: DecoderParams
    predictor: PredictorParams

    def tensors(self):
        """All parameters as (name, tensor) pairs in a fixed order."""
        out = self.encoder.tensors("encoder.")
        out += self.attention.tensors("attention.")
        out += self.decoder.tensors("decoder.")
        out += self.predictor.tensors("predictor.")
        return out

    def flat(self):
        return [t for _, t in self.tensors()]

    def astype(self, dtype):
        def cast_block(block):
            if isinstance(block, LstmParams):
                return LstmParams(*[Tensor(getattr(block, f.name).data.astype(dtype),
                                           requires_grad=True) for f in fields(block)])
            raise TypeError(block)

        att = AttentionParams(*[Tensor(getattr(self.attention, f.name).data.astype(dtype),
                                       requires_grad=True) for f in fields(self.attention)])
        dec = DecoderParams(
            cell=cast_block(self.decoder.cell),
            out_W=Tensor(self.decoder.out_W.data.astype(dtype), requires_grad=True),
            out_b=Tensor(self.decoder.out_b.data.astype(dtype), requires_grad=True),
        )
        pred = PredictorParams(layers=[
            (Tensor(w.data.astype(dtype), requires_grad=True),
             Tensor(b.data.astype(dtype), requires_grad=True))
            for w, b in self.predictor.layers
        ])
        return ModelParameters(cast_block(self.encoder), att, dec, pred)


# ---- forward blocks ---------------------------------------------------------

def lstm_cell_step(x, h_prev, c_prev, p):
    """One LSTM step.

    Input, forget and output gates squash to (0, 1); the candidate update
    squashes to (-1, 1). The new cell state mixes the old one (scaled by the
    forget gate) with the gated candidate, and the hidden state is the output
    gate applied to tanh of the cell state.
    """
    def gate(W, U, b, act):
        return act(T.add(T.add(T.matmul(x, W), T.matmul(h_prev, U)), b))

    i = gate(p.W_i, p.U_i, p.b_i, T.sigmoid)
    f = gate(p.W_f, p.U_f, p.b_f, T.sigmoid)
    o = gate(p.W_o, p.U_o, p.b_o, T.sigmoid)
    g = gate(p.W_c, p.U_c, p.b_c, T.tanh)
    c = T.add(T.mul(f, c_prev), T.mul(i, g))
    h = T.mul(o, T.tanh(c))
    return h, c


def encode(xs, params):
    """Run the cell over a sequence from zero initial state.

    xs: list of T input tensors (B, n). Returns the full hidden and cell
    state sequences as lists of (B, p) tensors.
    """
    if not xs:
        raise ValueError("cannot encode an empty sequence")
    batch = xs[0].shape[0]
    p = params.W_i.shape[1]
    h = T.zeros((batch, p), dtype=params.W_i.dtype)
    c = T.zeros((batch, p), dtype=params.W_i.dtype)
    H, C = [], []
    for x in xs:
        h, c = lstm_cell_step(x, h, c, params)
        H.append(h)
        C.append(c)
    return H, C


def attention_project(H, params):
    """Per-position encoder projections W_h h_j + b_a, reusable across decoder steps."""
    return [T.add(T.matmul(h_j, params.W_h), params.b_a) for h_j in H]


def attention_weights(s_prev, H, params, projected=None):
    """Alignment of the previous decoder state against every encoder position.

    Additive scoring: v . tanh(W_s s_prev + W_h h_j + b_a) for each j, then a
    softmax over positions, so each row is a distribution over the T cycles.
    Returns a (B, T) tensor.
    """
    if projected is None:
        projected = attention_project(H, params)
    s_proj = T.matmul(s_prev, params.W_s)
    stacked = T.concat([T.add(s_proj, pj) for pj in projected], axis=0)  # (T*B, a)
    scores_flat = T.matmul(T.tanh(stacked), params.v)                    # (T*B, 1)
    batch = s_prev.shape[0]
    cols = [
        T.narrow(scores_flat, j * batch, (j + 1) * batch, axis=0)
        for j in range(len(H))
    ]
    scores = T.concat(cols, axis=1)                                      # (B, T)
    return T.softmax(scores, axis=1)


def context_vector(weights, H):
    """Weighted sum of encoder hidden states, (B, p)."""
    if weights.shape[1] != len(H):
        raise ValueError(f"{weights.shape[1]} weights for {len(H)} positions")
    z = None
    for j, h_j in enumerate(H):
        part = T.mul(T.narrow(weights, j, j + 1, axis=1), h_j)
        z = part if z is None else T.add(z, part)
    return z


def decode_step(y_in, z, s_prev, c_prev, params):
    """One decoder step: consume the previous frame and the context, emit the next frame."""
    joint = T.concat([y_in, z], axis=1)
    s, c = lstm_cell_step(joint, s_prev, c_prev, params.cell)
    y_next = T.add(T.matmul(s, params.out_W), params.out_b)
    return s, c, y_next


def predictor_forward(features, params):
    out = features
    for w, b in params.layers:
        out = T.relu(T.add(T.matmul(out, w), b))
    return out


def predict_rul(h_last, s_last, params):
    """RUL estimate from both latent summaries, (B, 1) and non-negative."""
    return predictor_forward(T.concat([h_last, s_last], axis=1), params)


# ---- initialization ----------------------------------------------------------

def _uniform(rng, fan_in, shape, dtype):
    limit = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def _zeros_param(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _init_lstm(rng, input_dim, hidden, dtype):
    ws = {}
    for gate in ("i", "f", "o", "c"):
        ws["W_" + gate] = _uniform(rng, input_dim, (input_dim, hidden), dtype)
        ws["U_" + gate] = _uniform(rng, hidden, (hidden, hidden), dtype)
        ws["b_" + gate] = _zeros_param((hidden,), dtype)
    return LstmParams(**ws)


def predictor_widths(config):
    """Layer widths of the RUL head: feature dim, hidden widths, then 1."""
    p = config.hidden
    feature_dim = {"encoder": p, "decoder": p, "both": 2 * p}[config.feature_set]
    return [feature_dim, *config.predictor_hidden, 1]


def init_params(config, rng, dtype=None):
    """Fresh weights: uniform +/- 1/sqrt(fan_in), zero biases.

    Draw order is fixed (encoder gates, attention, decoder gates, output
    layer, predictor stack) so one seed always yields the same weights. All
    blocks are always allocated; the ablation flags only decide which ones
    the forward pass uses, so variants that share a seed share their initial
    weights.
    """
    dtype = T.DEFAULT_DTYPE if dtype is None else dtype
    n, p, a = config.n_sensors, config.hidden, config.attention_width
    encoder = _init_lstm(rng, n, p, dtype)
    attention = AttentionParams(
        W_s=_uniform(rng, p, (p, a), dtype),
        W_h=_uniform(rng, p, (p, a), dtype),
        b_a=_zeros_param((a,), dtype),
        v=_uniform(rng, a, (a, 1), dtype),
    )
    decoder = DecoderParams(
        cell=_init_lstm(rng, n + p, p, dtype),
        out_W=_uniform(rng, p, (p, n), dtype),
        out_b=_zeros_param((n,), dtype),
    )
    widths = predictor_widths(config)
    layers = []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        layers.append((_uniform(rng, d_in, (d_in, d_out), dtype),
                       _zeros_param((d_out,), dtype)))
    return ModelParameters(encoder, attention, decoder, PredictorParams(layers))
