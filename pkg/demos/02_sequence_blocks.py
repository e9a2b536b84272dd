# The sequence blocks one at a time: LSTM cell against a hand oracle,
# encoder unroll, additive attention, and the attended context vector.

import math

import numpy as np

from ats2s import nn
from ats2s.tensor import Tensor

# An LSTM cell with every weight zero and every bias zero maps any input
# to zero state. Set all biases so the gate pre-activations are exactly 1
# and the cell value has a closed form.

p = nn.LstmParams(
    W_i=Tensor(np.zeros((2, 3)), requires_grad=True),
    W_f=Tensor(np.zeros((2, 3)), requires_grad=True),
    W_o=Tensor(np.zeros((2, 3)), requires_grad=True),
    W_c=Tensor(np.zeros((2, 3)), requires_grad=True),
    U_i=Tensor(np.zeros((3, 3)), requires_grad=True),
    U_f=Tensor(np.zeros((3, 3)), requires_grad=True),
    U_o=Tensor(np.zeros((3, 3)), requires_grad=True),
    U_c=Tensor(np.zeros((3, 3)), requires_grad=True),
    b_i=Tensor(np.ones(3), requires_grad=True),
    b_f=Tensor(np.ones(3), requires_grad=True),
    b_o=Tensor(np.ones(3), requires_grad=True),
    b_c=Tensor(np.ones(3), requires_grad=True),
)
x = Tensor(np.zeros((1, 2)))
h0 = Tensor(np.zeros((1, 3)))
c0 = Tensor(np.zeros((1, 3)))
h1, c1 = nn.lstm_cell_step(x, h0, c0, p)

sig = 1.0 / (1.0 + math.exp(-1.0))
c_expected = sig * math.tanh(1.0)                 # i * g with f*c0 = 0
h_expected = sig * math.tanh(c_expected)          # o * tanh(c)
print("cell state:", c1.data[0, 0], "vs oracle", c_expected)
print("hidden    :", h1.data[0, 0], "vs oracle", h_expected)

# Unrolling the encoder over a short random sequence returns one hidden
# state per step; the magnitudes stay below 1 because of the tanh.

rng = np.random.default_rng(1)
cfg = type("C", (), dict(n_sensors=2, hidden=3, attention_width=4,
                         predictor_hidden=(4,), feature_set="both"))
params = nn.init_params(cfg, rng)
xs = [Tensor(rng.normal(size=(1, 2)).astype(np.float32)) for _ in range(5)]
H, C = nn.encode(xs, params.encoder)
print("encoder steps:", len(H), "max |h|:", max(abs(h.data).max() for h in H))

# Attention turns a decoder state plus the encoder states into a weight
# per step: non-negative, summing to one.

s_prev = Tensor(rng.normal(size=(1, 3)).astype(np.float32))
weights = nn.attention_weights(s_prev, H, params.attention)
print("attention weights:", np.round(weights.data[0], 4), "sum:", weights.data.sum())

# The context vector is the attention-weighted average of the encoder
# states, so each component lies inside the min/max envelope.

z = nn.context_vector(weights, H)
stack = np.stack([h.data[0] for h in H])
print("context:", np.round(z.data[0], 4))
print("envelope low :", np.round(stack.min(axis=0), 4))
print("envelope high:", np.round(stack.max(axis=0), 4))
