"""Fleet-level accuracy measures and the evaluation report."""

from dataclasses import dataclass

import numpy as np


def _paired(predictions, truths):
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"need matching 1-D arrays, got {p.shape} and {t.shape}")
    if p.size == 0:
        raise ValueError("cannot evaluate zero predictions")
    return p, t


def rmse(predictions, truths):
    p, t = _paired(predictions, truths)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def score(predictions, truths, aggregate="sum"):
    """Asymmetric scoring: late predictions (positive error) cost more.

    Per engine, with d = predicted - true:
        exp(-d/13) - 1  when d < 0   (early)
        exp(d/10) - 1   when d >= 0  (late)
    Summed over the fleet by default; aggregate="mean" averages instead.
    Lower is better; a perfect fleet scores 0.
    """
    p, t = _paired(predictions, truths)
    d = p - t
    per_engine = np.where(d < 0, np.expm1(-d / 13.0), np.expm1(d / 10.0))
    if aggregate == "sum":
        return float(per_engine.sum())
    if aggregate == "mean":
        return float(per_engine.mean())
    raise ValueError(f"aggregate must be 'sum' or 'mean', got {aggregate!r}")


@dataclass
class EvalResult:
    engine_ids: list
    predictions: list
    truths: list
    rmse: float
    score: float

    @classmethod
    def from_predictions(cls, engine_ids, predictions, truths, aggregate="sum"):
        order = np.argsort(np.asarray(engine_ids), kind="stable")
        ids = [int(engine_ids[i]) for i in order]
        preds = [float(predictions[i]) for i in order]
        trues = [float(truths[i]) for i in order]
        return cls(ids, preds, trues, rmse(preds, trues), score(preds, trues, aggregate))


def report(result, path=None):
    """Render per-engine rows plus summary comment lines; optionally write a file.

    Rows are sorted by engine id; the trailing comments carry the fleet
    RMSE and score so the file is self-contained.
    """
    lines = ["engine_id,predicted_rul,true_rul,error"]
    for eid, pred, true in zip(result.engine_ids, result.predictions, result.truths):
        lines.append(f"{eid},{pred!r},{true!r},{pred - true!r}")
    lines.append(f"#rmse={result.rmse!r}")
    lines.append(f"#score={result.score!r}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
