"""Model assembly: configuration, joint training objective, fit/infer, checkpoints.

Checkpoint byte layout (format version 1):

    bytes 0..5    magic b"ATS2S\\x00"
    bytes 6..13   little-endian uint64 header length H
    bytes 14..    UTF-8 JSON header (sorted keys), H bytes
    then          raw C-order array payloads, little-endian, concatenated
                  in the order listed under header["arrays"]

The header records the format version, the full model configuration, the
normalization statistics and condition table (when present), and one
{name, shape, dtype} entry per parameter array. Everything needed to
rebuild the model is inside the file; loading validates the magic, the
version, every declared shape, and the payload length before touching
any numbers.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import nn
from . import tensor as T
from .data import ConditionTable, NormalizationStats
from .metrics import rmse
from .optim import Adam, clip_grads
from .rng import RngStreams
from .tensor import Tensor

log = logging.getLogger("ats2s")

CHECKPOINT_MAGIC = b"ATS2S\x00"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Everything the model needs to build, train, and run.

    Defaults follow the reference operating point: 30-cycle windows, batch
    size 10, learning rate 3e-4, hidden width 32, 30-wide attention layer,
    a 32/18 RUL head, dropout 0.2, 20 epochs.
    """

    n_sensors: int = 14
    seq_len: int = 30
    hidden: int = 32
    attention_width: int = 30
    predictor_hidden: tuple = (32, 18)
    alpha: float = 1.0
    learning_rate: float = 3e-4
    batch_size: int = 10
    epochs: int = 20
    dropout: float = 0.2
    seed: int = 0
    rul_cap: int = 125
    use_attention: bool = True
    use_reconstruction: bool = True
    feature_set: str = "both"
    grad_clip: float = 0.0  # 0 disables clipping

    def problems(self):
        """All violations at once, each naming the offending field."""
        out = []
        for name in ("n_sensors", "seq_len", "hidden", "attention_width",
                     "batch_size", "epochs"):
            if int(getattr(self, name)) < 1:
                out.append(f"{name} must be a positive integer")
        if not self.predictor_hidden or any(int(w) < 1 for w in self.predictor_hidden):
            out.append("predictor_hidden must list positive layer widths")
        if self.alpha < 0:
            out.append("alpha must be >= 0")
        if self.learning_rate <= 0:
            out.append("learning_rate must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            out.append("dropout must be in [0, 1)")
        if self.rul_cap < 1:
            out.append("rul_cap must be >= 1")
        if self.feature_set not in ("encoder", "decoder", "both"):
            out.append("feature_set must be one of encoder, decoder, both")
        if self.grad_clip < 0:
            out.append("grad_clip must be >= 0 (0 disables)")
        if self.feature_set == "decoder" and not self.use_reconstruction:
            out.append("feature_set=decoder requires the reconstruction path "
                       "(use_reconstruction=true)")
        return out

    def validated(self):
        issues = self.problems()
        if issues:
            raise ValueError("; ".join(issues))
        return self

    def to_dict(self):
        d = asdict(self)
        d["predictor_hidden"] = list(self.predictor_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config fields: {unknown}")
        d = dict(d)
        if "predictor_hidden" in d:
            d["predictor_hidden"] = tuple(int(w) for w in d["predictor_hidden"])
        return cls(**d)


@dataclass
class EpochStats:
    joint: float
    reconstruction: float
    rul: float
    valid_rmse: float = None


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    def as_dict(self):
        return {"epochs": [asdict(e) for e in self.epochs]}


# ---- objective -----------------------------------------------------------------

def joint_loss(Y_hat, Y, rul_hat, rul_true, alpha):
    """Combined objective (L, L_rec, L_rul).

    L_rec is the squared reconstruction error summed over every frame entry
    and averaged over the batch; L_rul is the mean squared RUL error;
    L = alpha * L_rec + L_rul. At alpha = 0 the joint value equals L_rul.
    """
    if len(Y_hat) != len(Y):
        raise ValueError(f"{len(Y_hat)} predicted frames vs {len(Y)} target frames")
    batch = rul_hat.shape[0]
    sse = None
    for y_hat, y in zip(Y_hat, Y):
        d = y_hat - y
        step = T.sum_all(T.mul(d, d))
        sse = step if sse is None else T.add(sse, step)
    l_rec = T.scale(sse, 1.0 / batch)
    l_rul = T.mse(rul_hat, rul_true)
    total = T.add(T.scale(l_rec, alpha), l_rul)
    return total, l_rec, l_rul


# ---- forward pass ----------------------------------------------------------------

def forward_pass(X, Y, params, config, mode="teacher", dropout_rng=None):
    """Run the full network over a batch of windows.

    X: (B, n, T) array. Y: matching target array, required in teacher mode.
    mode "teacher" feeds ground-truth previous frames to the decoder;
    "autoregressive" feeds its own previous prediction (the inference
    path). Dropout only happens when a dropout_rng is passed and
    config.dropout > 0, and touches exactly two places: the encoder output
    sequence and the predictor input.

    Returns (Y_hat, rul_hat, diagnostics): the list of T predicted frames,
    the (B, 1) RUL estimate, and a dict with the attention weights per
    decoder step (None when attention is off).
    """
    if mode not in ("teacher", "autoregressive"):
        raise ValueError(f"mode must be teacher or autoregressive, got {mode!r}")
    if mode == "teacher" and Y is None:
        raise ValueError("teacher mode needs target frames")
    X = np.asarray(X)
    if X.ndim != 3:
        raise ValueError(f"X must be (batch, sensors, cycles), got {X.shape}")
    dtype = params.encoder.W_i.data.dtype
    batch, n, steps = X.shape
    if n != params.encoder.W_i.shape[0]:
        raise ValueError(f"{n} channels but encoder expects {params.encoder.W_i.shape[0]}")

    training = dropout_rng is not None and config.dropout > 0.0
    xs = [Tensor(np.ascontiguousarray(X[:, :, t]).astype(dtype, copy=False))
          for t in range(steps)]
    ys = None
    if Y is not None:
        Y = np.asarray(Y)
        if Y.shape != X.shape:
            raise ValueError(f"target shape {Y.shape} != input shape {X.shape}")
        ys = [Tensor(np.ascontiguousarray(Y[:, :, t]).astype(dtype, copy=False))
              for t in range(steps)]
    diag = {"targets": ys}

    H, C = nn.encode(xs, params.encoder)
    if training:
        H_ctx = [T.dropout(h, config.dropout, dropout_rng, True) for h in H]
    else:
        H_ctx = H

    projected = nn.attention_project(H_ctx, params.attention) if config.use_attention else None
    s, c = H[-1], C[-1]
    y_in = xs[-1]
    Y_hat = []
    weights_log = [] if config.use_attention else None
    for t in range(steps):
        if config.use_attention:
            w = nn.attention_weights(s, H_ctx, params.attention, projected)
            z = nn.context_vector(w, H_ctx)
            weights_log.append(w.data.copy())
        else:
            z = H_ctx[-1]
        s, c, y_next = nn.decode_step(y_in, z, s, c, params.decoder)
        Y_hat.append(y_next)
        if t + 1 < steps:
            if mode == "teacher":
                y_in = ys[t]
            else:
                y_in = y_next

    if config.feature_set == "encoder":
        feats = H[-1]
    elif config.feature_set == "decoder":
        feats = s
    else:
        feats = T.concat([H[-1], s], axis=1)
    if training:
        feats = T.dropout(feats, config.dropout, dropout_rng, True)
    rul_hat = nn.predictor_forward(feats, params.predictor)
    diag["attention"] = weights_log
    return Y_hat, rul_hat, diag


def _stack_samples(samples):
    X = np.stack([s.X for s in samples]).astype(np.float32)
    Y = np.stack([s.Y for s in samples]).astype(np.float32)
    ruls = np.array([[s.rul] for s in samples], dtype=np.float32)
    return X, Y, ruls


def predict_windows(params, config, X):
    """RUL for each window in a (B, n, T) batch, clamped to [0, rul_cap]."""
    _, rul_hat, _ = forward_pass(X, None, params, config, mode="autoregressive")
    values = rul_hat.data.reshape(-1).astype(np.float64)
    return np.clip(values, 0.0, float(config.rul_cap))


def infer(params, config, window):
    """RUL estimate for one (n, T) window."""
    window = np.asarray(window)
    if window.ndim != 2:
        raise ValueError(f"expected one (sensors, cycles) window, got {window.shape}")
    return float(predict_windows(params, config, window[None, :, :])[0])


# ---- training --------------------------------------------------------------------

def fit(train_samples, config, valid_samples=None, params=None):
    """Mini-batch Adam over the joint objective.

    Shuffles with a dedicated seeded stream each epoch, teacher-forces the
    decoder, and steps Adam once per batch. Returns the trained parameters
    and the per-epoch loss history. Pass `params` to continue training an
    existing model. A non-finite loss aborts with TrainingDiverged.
    """
    config.validated()
    if not train_samples:
        raise ValueError("no training windows")
    streams = RngStreams(config.seed)
    if params is None:
        params = nn.init_params(config, streams.init)
    flat = params.flat()
    X_all, Y_all, rul_all = _stack_samples(train_samples)
    if X_all.shape[1] != config.n_sensors:
        raise ValueError(f"windows have {X_all.shape[1]} channels, config says "
                         f"{config.n_sensors}")
    valid_arrays = None
    if valid_samples:
        vX, _, vr = _stack_samples(valid_samples)
        valid_arrays = (vX, vr.reshape(-1))

    alpha = config.alpha if config.use_reconstruction else 0.0
    opt = Adam(flat, lr=config.learning_rate)
    history = TrainHistory()
    total = X_all.shape[0]
    for epoch in range(config.epochs):
        order = streams.batching.permutation(total)
        sums = np.zeros(3)
        for lo in range(0, total, config.batch_size):
            pick = order[lo:lo + config.batch_size]
            try:
                Y_hat, rul_hat, diag = forward_pass(
                    X_all[pick], Y_all[pick], params, config,
                    mode="teacher", dropout_rng=streams.dropout)
                loss, l_rec, l_rul = joint_loss(
                    Y_hat, diag["targets"], rul_hat, Tensor(rul_all[pick]), alpha)
                T.clear_grads(flat)
                loss.backward()
            except FloatingPointError as exc:
                raise TrainingDiverged(
                    f"epoch {epoch + 1}, batch {lo // config.batch_size + 1}: {exc}"
                ) from exc
            if config.grad_clip > 0:
                clip_grads(flat, config.grad_clip)
            opt.step()
            sums += len(pick) * np.array([loss.item(), l_rec.item(), l_rul.item()])
        joint, rec, rul = (sums / total).tolist()
        stats = EpochStats(joint, rec, rul)
        if valid_arrays is not None:
            preds = predict_windows(params, config, valid_arrays[0])
            stats.valid_rmse = rmse(preds, valid_arrays[1])
        history.epochs.append(stats)
        log.info("epoch %d/%d joint=%.6f rec=%.6f rul=%.6f%s",
                 epoch + 1, config.epochs, joint, rec, rul,
                 f" valid_rmse={stats.valid_rmse:.4f}" if stats.valid_rmse is not None else "")
    return params, history


# ---- checkpoints -------------------------------------------------------------------

def save_checkpoint(path, params, config, stats=None, table=None):
    """Write the documented self-describing archive; bytes are deterministic."""
    entries = params.tensors()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "normalization": stats.to_dict() if stats is not None else None,
        "condition_table": table.to_dict() if table is not None else None,
        "arrays": [
            {"name": name, "shape": list(t.shape), "dtype": t.data.dtype.str}
            for name, t in entries
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for _, t in entries:
            arr = t.data.astype(t.data.dtype.newbyteorder("<"), copy=False)
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path):
    """Read an archive back into (params, config, stats, table).

    Every failure mode (bad magic, wrong version, corrupt header, shape or
    size mismatch) raises CheckpointError rather than crashing downstream.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    if len(raw) < offset + 8:
        raise CheckpointError("truncated checkpoint header")
    header_len = int.from_bytes(raw[offset:offset + 8], "little")
    offset += 8
    if len(raw) < offset + header_len:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    offset += header_len
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('format_version')!r}")
    try:
        config = ModelConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad config in checkpoint: {exc}") from exc

    declared = header.get("arrays")
    if not isinstance(declared, list):
        raise CheckpointError("checkpoint lists no arrays")
    arrays = {}
    for entry in declared:
        try:
            name = entry["name"]
            shape = tuple(int(v) for v in entry["shape"])
            dtype = np.dtype(entry["dtype"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"bad array entry {entry!r}: {exc}") from exc
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(f"array {name!r} runs past end of file")
        arrays[name] = np.frombuffer(
            raw, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes after arrays")

    dtype = next(iter(arrays.values())).dtype if arrays else np.float32
    params = nn.init_params(config, np.random.default_rng(0), dtype=dtype)
    expected = params.tensors()
    expected_names = [name for name, _ in expected]
    if sorted(expected_names) != sorted(arrays):
        missing = sorted(set(expected_names) - set(arrays))
        extra = sorted(set(arrays) - set(expected_names))
        raise CheckpointError(f"array names do not match config: missing {missing}, "
                              f"unexpected {extra}")
    for name, t in expected:
        if arrays[name].shape != t.shape:
            raise CheckpointError(
                f"array {name!r} has shape {arrays[name].shape}, config implies {t.shape}")
        t.data = arrays[name]

    stats = (NormalizationStats.from_dict(header["normalization"])
             if header.get("normalization") else None)
    table = (ConditionTable.from_dict(header["condition_table"])
             if header.get("condition_table") else None)
    return params, config, stats, table
