"""Turbofan fleet data handling.

File format: whitespace-separated text, one row per engine cycle, 26
columns: engine id, cycle number, three operating settings, then 21
sensor channels. Cycles for an engine must run 1..T with no gaps. The
same layout is used for train files (run to failure) and test files
(truncated), with true test RULs in a separate one-number-per-line file.

The pipeline is: parse -> select_sensors -> cluster_conditions (train
settings) -> fit_normalizer (train) -> apply_normalizer -> windows.
"""

import io
from dataclasses import dataclass

import numpy as np


class ParseError(ValueError):
    pass


class DataError(ValueError):
    pass


N_RAW_SENSORS = 21
N_COLUMNS = 2 + 3 + N_RAW_SENSORS


@dataclass
class DatasetProfile:
    sensor_ids: tuple      # 1-based channels kept for this dataset
    rul_cap: int
    n_conditions: int
    train_engines: int
    test_engines: int


DATASETS = {
    "FD001": DatasetProfile((2, 3, 4, 7, 8, 9, 11, 12, 13, 14, 15, 17, 20, 21), 125, 1, 100, 100),
    "FD002": DatasetProfile((3, 4, 9, 11, 14, 15, 17, 20, 21), 130, 6, 260, 259),
    "FD003": DatasetProfile((2, 3, 4, 7, 8, 9, 11, 12, 13, 14, 15, 17, 20, 21), 125, 1, 100, 100),
    "FD004": DatasetProfile((3, 4, 9, 11, 14, 15, 17, 20, 21), 130, 6, 249, 248),
}


@dataclass
class EngineTrajectory:
    engine_id: int
    settings: np.ndarray   # (3, T)
    sensors: np.ndarray    # (n, T)
    sensor_ids: tuple      # 1-based channel numbers for the rows of `sensors`

    @property
    def n_cycles(self):
        return self.sensors.shape[1]

    def __post_init__(self):
        if self.settings.shape[1] != self.sensors.shape[1]:
            raise DataError(
                f"engine {self.engine_id}: {self.settings.shape[1]} setting rows vs "
                f"{self.sensors.shape[1]} sensor rows")
        if len(self.sensor_ids) != self.sensors.shape[0]:
            raise DataError(f"engine {self.engine_id}: sensor id count mismatch")


def _open_text(source):
    if hasattr(source, "read"):
        return source
    text = str(source)
    if "\n" in text:
        return io.StringIO(text)
    try:
        return open(text, "r", encoding="utf-8")
    except OSError:
        return io.StringIO(text)


def parse_cmapss(source):
    """Read a fleet file into trajectories sorted by engine id.

    `source` may be a path, an open text file, or the raw text itself.
    Raises ParseError naming the offending line for wrong column counts,
    non-numeric fields, or non-contiguous cycle numbers.
    """
    stream = _open_text(source)
    rows = {}
    for lineno, line in enumerate(stream, start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != N_COLUMNS:
            raise ParseError(f"line {lineno}: expected {N_COLUMNS} columns, got {len(tokens)}")
        try:
            values = [float(tok) for tok in tokens]
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric field") from None
        engine = int(values[0])
        cycle = int(values[1])
        rows.setdefault(engine, []).append((cycle, lineno, values[2:5], values[5:]))

    out = []
    for engine in sorted(rows):
        entries = rows[engine]
        for k, (cycle, lineno, _, _) in enumerate(entries, start=1):
            if cycle != k:
                raise ParseError(
                    f"line {lineno}: engine {engine} cycle {cycle} out of order "
                    f"(expected {k})")
        settings = np.array([e[2] for e in entries], dtype=np.float64).T
        sensors = np.array([e[3] for e in entries], dtype=np.float64).T
        out.append(EngineTrajectory(engine, settings, sensors,
                                    tuple(range(1, N_RAW_SENSORS + 1))))
    return out


def serialize_cmapss(trajs):
    """Inverse of parse_cmapss; float fields use round-trip repr."""
    lines = []
    for traj in trajs:
        if len(traj.sensor_ids) != N_RAW_SENSORS:
            raise DataError("serialization needs all 21 raw channels")
        for t in range(traj.n_cycles):
            fields = [str(traj.engine_id), str(t + 1)]
            fields += [repr(float(v)) for v in traj.settings[:, t]]
            fields += [repr(float(v)) for v in traj.sensors[:, t]]
            lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def parse_rul_file(source):
    """One true RUL per line, aligned with test engines in id order."""
    stream = _open_text(source)
    values = []
    for lineno, line in enumerate(stream, start=1):
        tok = line.strip()
        if not tok:
            continue
        try:
            values.append(float(tok))
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric RUL") from None
    return values


def select_sensors(traj, dataset_id):
    """Keep only the channels that carry degradation signal for this dataset."""
    if dataset_id not in DATASETS:
        raise DataError(f"unknown dataset {dataset_id!r}; expected one of {sorted(DATASETS)}")
    wanted = DATASETS[dataset_id].sensor_ids
    index = {sid: k for k, sid in enumerate(traj.sensor_ids)}
    missing = [sid for sid in wanted if sid not in index]
    if missing:
        raise DataError(f"engine {traj.engine_id}: channels {missing} not present")
    picks = [index[sid] for sid in wanted]
    return EngineTrajectory(traj.engine_id, traj.settings, traj.sensors[picks, :], wanted)


# ---- operating conditions -----------------------------------------------------

class ConditionTable:
    """Distinct operating points found in training settings.

    A condition key is the 3 settings rounded to `precision` decimals; ids
    are assigned in sorted key order, so they are stable across runs.
    """

    def __init__(self, keys, precision):
        self.keys = [tuple(k) for k in keys]
        self.precision = precision
        self._ids = {k: m for m, k in enumerate(self.keys)}

    @property
    def n_conditions(self):
        return len(self.keys)

    def assign(self, settings):
        """Map (3, T) settings to per-cycle condition ids; unseen points are errors."""
        rounded = np.round(np.asarray(settings, dtype=np.float64), self.precision)
        ids = np.empty(rounded.shape[1], dtype=np.intp)
        for t in range(rounded.shape[1]):
            key = tuple(rounded[:, t])
            if key not in self._ids:
                raise DataError(f"unseen operating condition {key}")
            ids[t] = self._ids[key]
        return ids

    def to_dict(self):
        return {"precision": self.precision, "keys": [list(k) for k in self.keys]}

    @classmethod
    def from_dict(cls, d):
        return cls([tuple(k) for k in d["keys"]], d["precision"])


def cluster_conditions(trajs, precision=1, max_conditions=12):
    """Build the condition table from training trajectories."""
    keys = set()
    for traj in trajs:
        rounded = np.round(traj.settings, precision)
        for t in range(rounded.shape[1]):
            keys.add(tuple(rounded[:, t]))
            if len(keys) > max_conditions:
                raise DataError(
                    f"more than {max_conditions} operating conditions; "
                    "raise max_conditions or lower the rounding precision")
    return ConditionTable(sorted(keys), precision)


# ---- normalization ---------------------------------------------------------------

@dataclass
class NormalizationStats:
    """Per-(channel, condition) training min and max."""

    mins: np.ndarray       # (n, k)
    maxs: np.ndarray       # (n, k)
    sensor_ids: tuple

    def to_dict(self):
        return {
            "sensor_ids": list(self.sensor_ids),
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mins"], dtype=np.float64),
                   np.array(d["maxs"], dtype=np.float64),
                   tuple(d["sensor_ids"]))


def fit_normalizer(trajs, table):
    if not trajs:
        raise DataError("cannot fit a normalizer on zero trajectories")
    n = trajs[0].sensors.shape[0]
    k = table.n_conditions
    mins = np.full((n, k), np.inf)
    maxs = np.full((n, k), -np.inf)
    for traj in trajs:
        ids = table.assign(traj.settings)
        for m in np.unique(ids):
            block = traj.sensors[:, ids == m]
            mins[:, m] = np.minimum(mins[:, m], block.min(axis=1))
            maxs[:, m] = np.maximum(maxs[:, m], block.max(axis=1))
    if not np.isfinite(mins).all():
        empty = sorted(set(np.argwhere(~np.isfinite(mins))[:, 1].tolist()))
        raise DataError(f"conditions {empty} never observed while fitting")
    return NormalizationStats(mins, maxs, trajs[0].sensor_ids)


def apply_normalizer(traj, stats, table):
    """Min-max scale each channel within its cycle's operating condition.

    Constant train channels (max == min) map to exactly 0. Train data lands
    in [0, 1]; unseen test values may fall outside, which is fine.
    """
    if traj.sensor_ids != stats.sensor_ids:
        raise DataError("normalizer was fit on a different channel subset")
    ids = table.assign(traj.settings)
    lo = stats.mins[:, ids]       # (n, T)
    hi = stats.maxs[:, ids]
    span = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = np.where(span > 0, (traj.sensors - lo) / np.where(span > 0, span, 1.0), 0.0)
    return EngineTrajectory(traj.engine_id, traj.settings, scaled, traj.sensor_ids)


# ---- windowing --------------------------------------------------------------------

@dataclass
class WindowSample:
    engine_id: int
    window_start: int      # 1-based cycle of the first frame
    X: np.ndarray          # (n, W) float32
    Y: np.ndarray          # (n, W) float32, X shifted one cycle, last frame repeated at the edge
    rul: float


def _shift_target(block, next_frame):
    """Y = block shifted left one cycle; the slot after the window holds next_frame."""
    target = np.empty_like(block)
    target[:, :-1] = block[:, 1:]
    target[:, -1] = next_frame
    return target


def segment_windows(traj, width, stride=1, rul_cap=125):
    """Sliding training windows with piecewise-capped RUL labels.

    A window covering cycles [t-W+1, t] is labeled min(T_total - t, cap),
    so the label falls linearly to 0 at the final window. Engines shorter
    than the window are skipped. The target Y is the window shifted one
    cycle; the final window repeats the last observed frame at the edge.
    """
    if width < 1 or stride < 1:
        raise DataError(f"width {width} and stride {stride} must be positive")
    total = traj.n_cycles
    if total < width:
        return []
    out = []
    sensors = traj.sensors.astype(np.float32)
    for start in range(0, total - width + 1, stride):
        end = start + width
        block = sensors[:, start:end]
        next_frame = sensors[:, end] if end < total else block[:, -1]
        rul = min(total - end, rul_cap)
        out.append(WindowSample(traj.engine_id, start + 1, block,
                                _shift_target(block, next_frame), float(rul)))
    return out


def build_test_set(trajs, rul_values, width, rul_cap=125, cap_labels=True):
    """One window per test engine: the last `width` cycles, left-padded by
    repeating the first frame when the engine history is shorter."""
    if len(trajs) != len(rul_values):
        raise DataError(f"{len(trajs)} test engines but {len(rul_values)} RUL values")
    out = []
    for traj, rul in zip(trajs, rul_values):
        sensors = traj.sensors.astype(np.float32)
        total = traj.n_cycles
        if total >= width:
            block = sensors[:, total - width:]
            start = total - width + 1
        else:
            pad = np.repeat(sensors[:, :1], width - total, axis=1)
            block = np.concatenate([pad, sensors], axis=1)
            start = 1
        label = min(float(rul), float(rul_cap)) if cap_labels else float(rul)
        out.append(WindowSample(traj.engine_id, start, block,
                                _shift_target(block, block[:, -1]), label))
    return out


def dump_windows_csv(samples, path):
    """Debug dump: one row per window, flattened channel-major."""
    with open(path, "w", encoding="utf-8") as fh:
        if not samples:
            fh.write("engine_id,window_start,rul\n")
            return
        n, width = samples[0].X.shape
        cols = [f"s{r}_t{t + 1}" for r in range(n) for t in range(width)]
        fh.write(",".join(["engine_id", "window_start", "rul"] + cols) + "\n")
        for s in samples:
            row = [str(s.engine_id), str(s.window_start), repr(float(s.rul))]
            row += [repr(float(v)) for v in s.X.reshape(-1)]
            fh.write(",".join(row) + "\n")


# ---- synthetic fleets ----------------------------------------------------------------

_CONDITION_POINTS = np.array([
    [0.0, 0.0, 100.0],
    [10.0, 0.3, 100.0],
    [20.0, 0.7, 100.0],
    [25.0, 0.6, 60.0],
    [35.0, 0.8, 100.0],
    [42.0, 0.8, 40.0],
])


def is_constant_channel(sensor_id):
    """Raw channels 5, 10, 15, 20 (1-based ids) carry no signal, by construction."""
    return sensor_id % 5 == 0


def synth_generate(fleet_size, n_sensors=N_RAW_SENSORS, length_range=(120, 260),
                   noise_level=0.01, seed=0, n_conditions=1, test_fleet_size=None):
    """Seeded synthetic run-to-failure fleet.

    Each engine follows a latent degradation d(t) = (t/T)^k rising from 0
    to 1, k drawn per engine. Non-constant channels are affine in d(t) with
    a per-condition offset, plus Gaussian noise; channels at index 4 mod 5
    stay constant to exercise degenerate normalization. With noise_level=0
    and one condition every non-constant channel is strictly monotone in t.
    Test engines are truncated before failure; their true RULs are returned
    alongside. Deterministic for a given argument tuple.
    """
    if not 1 <= n_conditions <= len(_CONDITION_POINTS):
        raise DataError(f"n_conditions must be 1..{len(_CONDITION_POINTS)}")
    if test_fleet_size is None:
        test_fleet_size = fleet_size
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    base = rng.uniform(-10.0, 10.0, size=n_sensors)
    slope = rng.uniform(0.5, 2.0, size=n_sensors) * rng.choice([-1.0, 1.0], size=n_sensors)
    cond_gain = rng.uniform(0.5, 1.5, size=n_sensors)

    def build(engine_id):
        total = int(rng.integers(length_range[0], length_range[1] + 1))
        k = rng.uniform(0.5, 2.0)
        ids = (rng.integers(0, n_conditions, size=total)
               if n_conditions > 1 else np.zeros(total, dtype=np.intp))
        settings = _CONDITION_POINTS[ids].T + rng.uniform(-0.04, 0.04, size=(3, total))
        d = (np.arange(1, total + 1) / total) ** k
        sensors = np.empty((n_sensors, total))
        for r in range(n_sensors):
            if is_constant_channel(r + 1):
                sensors[r, :] = base[r]
            else:
                sensors[r, :] = (base[r] + cond_gain[r] * ids
                                 + slope[r] * d
                                 + noise_level * rng.normal(size=total))
        return EngineTrajectory(engine_id, settings, sensors,
                                tuple(range(1, n_sensors + 1)))

    train = [build(i + 1) for i in range(fleet_size)]
    test, ruls = [], []
    for i in range(test_fleet_size):
        full = build(i + 1)
        cut = int(rng.integers(min(5, full.n_cycles - 1), full.n_cycles))
        test.append(EngineTrajectory(full.engine_id, full.settings[:, :cut],
                                     full.sensors[:, :cut], full.sensor_ids))
        ruls.append(float(full.n_cycles - cut))
    return train, test, ruls
