"""Reverse-mode differentiation over small numpy arrays.

A Tensor is both the value holder and the graph node: each op builds a new
Tensor that remembers its parents and a closure computing the local
gradient contribution. backward() walks the graph once in reverse
topological order. Training runs in float32 by default; gradient
checking demands float64 (see optim.grad_check).

Every op validates shapes up front and refuses non-finite outputs, so a
diverging run fails at the op that produced the first NaN/Inf instead of
corrupting downstream state.
"""

import numpy as np
from scipy.special import expit

DEFAULT_DTYPE = np.float32


def _as_array(data, dtype):
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
        return data
    return np.asarray(data, dtype=DEFAULT_DTYPE)


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in '{op}' output")


class Tensor:
    """Array with an optional gradient and a record of how it was made."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, op=None, parents=()):
        self.data = _as_array(data, dtype)
        _check_finite(self.data, op or "leaf")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = tuple(parents)
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = self.op or ("param" if self.requires_grad else "leaf")
        return f"Tensor(shape={self.data.shape}, op={tag!r})"

    # operator sugar; a number on the right of * means scale
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def backward(self):
        """Seed d(self)/d(self)=1 and accumulate grads into the graph."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            # constant subgraphs never receive a gradient; their closures
            # would read grad=None, and they have nothing to propagate anyway
            if node._backward is not None and node.grad is not None:
                node._backward()


def _make(data, parents, op):
    need = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=need, dtype=data.dtype, op=op, parents=parents)


def _acc(t, g):
    # gradient sinks only where something upstream asked for it
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def clear_grads(tensors):
    for t in tensors:
        t.grad = None


# ---- ops -------------------------------------------------------------

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = _make(a.data @ b.data, (a, b), "matmul")

    def backward():
        g = out.grad
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    out._backward = backward
    return out


def add(a, b):
    """Elementwise sum; the second operand may be a 1-D bias over columns."""
    bias = a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]
    if not bias and a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
    out = _make(a.data + b.data, (a, b), "add")

    def backward():
        g = out.grad
        _acc(a, g)
        _acc(b, g.sum(axis=0) if bias else g)

    out._backward = backward
    return out


def mul(a, b):
    """Elementwise product; one side may be a (B,1) column against (B,n)."""
    if a.shape != b.shape:
        ok = (
            a.data.ndim == 2
            and b.data.ndim == 2
            and a.shape[0] == b.shape[0]
            and 1 in (a.shape[1], b.shape[1])
        )
        if not ok:
            raise ValueError(f"mul shape mismatch: {a.shape} * {b.shape}")
    out = _make(a.data * b.data, (a, b), "mul_elementwise")

    def backward():
        g = out.grad

        def local(t, other):
            lg = g * other
            if lg.shape != t.data.shape:
                lg = lg.sum(axis=1, keepdims=True)
            return lg

        _acc(a, local(a, b.data))
        _acc(b, local(b, a.data))

    out._backward = backward
    return out


def sigmoid(x):
    out = _make(expit(x.data), (x,), "sigmoid")

    def backward():
        y = out.data
        _acc(x, out.grad * y * (1.0 - y))

    out._backward = backward
    return out


def tanh(x):
    out = _make(np.tanh(x.data), (x,), "tanh")

    def backward():
        _acc(x, out.grad * (1.0 - out.data * out.data))

    out._backward = backward
    return out


def relu(x):
    out = _make(np.maximum(x.data, 0.0), (x,), "relu")

    def backward():
        _acc(x, out.grad * (x.data > 0))

    out._backward = backward
    return out


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = _make(e / e.sum(axis=axis, keepdims=True), (x,), "softmax")

    def backward():
        y = out.data
        g = out.grad
        inner = (g * y).sum(axis=axis, keepdims=True)
        _acc(x, y * (g - inner))

    out._backward = backward
    return out


def concat(parts, axis=0):
    parts = list(parts)
    if not parts:
        raise ValueError("concat of zero tensors")
    out = _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), "concat")

    def backward():
        g = out.grad
        offset = 0
        for p in parts:
            width = p.shape[axis]
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + width)
            _acc(p, g[tuple(idx)])
            offset += width

    out._backward = backward
    return out


def narrow(x, start, stop, axis=0):
    """Contiguous slice [start:stop) along one axis (op kind 'slice')."""
    size = x.shape[axis]
    if not (0 <= start < stop <= size):
        raise ValueError(f"slice [{start}:{stop}) out of range for axis {axis} of {x.shape}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = _make(x.data[idx], (x,), "slice")

    def backward():
        full = np.zeros_like(x.data)
        full[idx] = out.grad
        _acc(x, full)

    out._backward = backward
    return out


def mse(pred, target):
    """Mean of squared elementwise error, a scalar."""
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = _make(np.asarray((diff * diff).mean(), dtype=pred.data.dtype), (pred, target), "mse")

    def backward():
        g = out.grad * 2.0 / diff.size
        _acc(pred, g * diff)
        _acc(target, -g * diff)

    out._backward = backward
    return out


def scale(x, factor):
    factor = float(factor)
    out = _make(x.data * np.asarray(factor, dtype=x.data.dtype), (x,), "scale")

    def backward():
        _acc(x, out.grad * np.asarray(factor, dtype=x.data.dtype))

    out._backward = backward
    return out


def sum_all(x):
    out = _make(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), "sum")

    def backward():
        _acc(x, np.broadcast_to(out.grad, x.data.shape))

    out._backward = backward
    return out


def dropout(x, rate, rng, training):
    """Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate).

    Identity when training is False or rate is 0. The mask is constant for
    the backward pass, so gradients flow only through surviving entries.
    """
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.data.dtype) / np.asarray(1.0 - rate, dtype=x.data.dtype)
    out = _make(x.data * mask, (x,), "dropout")

    def backward():
        _acc(x, out.grad * mask)

    out._backward = backward
    return out


OPS = {
    "matmul": matmul,
    "add": add,
    "mul_elementwise": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "softmax": softmax,
    "concat": None,  # takes the input list whole; see forward()
    "slice": narrow,
    "mse": mse,
    "scale": scale,
    "sum": sum_all,
}


def forward(op_kind, inputs, **kwargs):
    """Apply one named op to a list of input tensors."""
    if op_kind not in OPS:
        raise ValueError(f"unknown op kind {op_kind!r}")
    if op_kind == "concat":
        return concat(inputs, **kwargs)
    return OPS[op_kind](*inputs, **kwargs)


def gradients(loss, leaves):
    """Run backward from `loss`; map each leaf to its gradient array.

    Leaves the loss never touched get explicit zeros.
    """
    loss.backward()
    return {
        leaf: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
        for leaf in leaves
    }


def zeros(shape, dtype=DEFAULT_DTYPE):
    return Tensor(np.zeros(shape, dtype=dtype))
