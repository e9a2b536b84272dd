# A tour of the reverse-mode engine: build a graph, run backward, and
# confirm the analytic gradients against central finite differences.

import numpy as np

from ats2s.optim import Adam, grad_check
from ats2s.tensor import Tensor, forward, gradients

# Tensors wrap a numpy array. Only leaves created with requires_grad=True
# receive gradients; everything downstream inherits the flag.

rng = np.random.default_rng(0)
W = Tensor(rng.normal(size=(3, 2)), requires_grad=True, dtype=np.float64)
b = Tensor(np.zeros(2), requires_grad=True, dtype=np.float64)
x = Tensor(rng.normal(size=(4, 3)), dtype=np.float64)

# Ops compose through the functional dispatcher or operator sugar.
h = forward("tanh", [x @ W + b])
target = Tensor(np.ones((4, 2)), dtype=np.float64)
loss = forward("mse", [h, target])
print("loss value:", loss.item())

# backward() seeds the scalar root and walks the graph once, reverse
# topological order, accumulating into the leaves.
loss.backward()
print("dloss/db:", b.grad)

# The same thing via the convenience helper, fresh gradients each call.
grads = gradients(loss, [W, b])
print("gradient shapes:", [g.shape for g in grads.values()])

# grad_check replays the loss with every parameter nudged +/- epsilon and
# reports the worst relative disagreement. Well below 1e-6 means the
# closed-form backward rules match the arithmetic.


def rebuild():
    hidden = forward("tanh", [x @ W + b])
    return forward("mse", [hidden, target])


err = grad_check(rebuild, [W, b])
print(f"worst relative gradient error: {err:.3e}")

# Ten Adam steps on the same objective; the loss should fall monotonically
# for a quadratic-ish bowl at this step size.
opt = Adam([W, b], lr=0.05)
for step in range(10):
    W.grad = None
    b.grad = None
    loss = rebuild()
    loss.backward()
    opt.step()
    print(f"step {step}: loss {loss.item():.6f}")
