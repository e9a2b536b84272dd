"""Adam updates and finite-difference gradient verification."""

import numpy as np

from .tensor import clear_grads


class Adam:
    """Adam with bias correction.

    Keeps one first/second moment buffer per parameter, in the parameter's
    own dtype. step() applies theta -= lr * m_hat / (sqrt(v_hat) + eps)
    reading gradients from each tensor's .grad (missing grad counts as 0).
    """

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m[...] = b1 * m + (1.0 - b1) * g
            v[...] = b2 * v + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** self.t)
            v_hat = v / (1.0 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def global_grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return total ** 0.5


def clip_grads(params, max_norm):
    """Scale all gradients down so their global L2 norm is at most max_norm."""
    norm = global_grad_norm(params)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * np.asarray(factor, dtype=p.grad.dtype)
    return norm


def grad_check(fn, params, epsilon=1e-5):
    """Worst relative disagreement between backward() and central differences.

    fn rebuilds the scalar loss from the current parameter values on every
    call. Each parameter entry is nudged by +/-epsilon in turn, so the cost
    is two evaluations per scalar; use it on desk-size models only. All
    parameters must be float64: at float32 the subtraction noise drowns the
    signal long before the 1e-4 acceptance line.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("gradient checking requires float64 parameters")

    clear_grads(params)
    loss = fn()
    if loss.data.size != 1:
        raise ValueError("gradient check target must be scalar")
    loss.backward()
    analytic = [
        (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params
    ]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = float(fn().data)
            flat[i] = orig - epsilon
            f_minus = float(fn().data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError("non-finite loss during gradient check")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = float(ana_flat[i])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst:
                worst = rel
    return worst
