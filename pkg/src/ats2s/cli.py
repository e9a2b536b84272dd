"""Command-line front end for the ats2s pipeline.

Subcommands: train, eval, predict, gradcheck, synth, experiment. A JSON
config file supplies keys; ``key=value`` arguments override file keys; the
``--seed`` and ``--out`` flags override their keys in turn.

Exit codes: 0 success, 1 usage, 2 config validation, 3 runtime failure.
Set ATS2S_LOG=debug|info|warning|error to change log verbosity.
"""

import argparse
import difflib
import json
import logging
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from . import data as data_mod
from . import model as model_mod
from . import nn
from .metrics import EvalResult, report
from .model import ModelConfig
from .optim import grad_check
from .tensor import Tensor

log = logging.getLogger("ats2s.cli")

GRADCHECK_THRESHOLD = 1e-4

ABLATION_VARIANTS = (
    ("basic", {"use_attention": False, "use_reconstruction": False}),
    ("+reconstruction", {"use_attention": False, "use_reconstruction": True}),
    ("+attention", {"use_attention": True, "use_reconstruction": False}),
    ("full", {"use_attention": True, "use_reconstruction": True}),
)
FEATURE_VARIANTS = (
    ("encoder", {"feature_set": "encoder"}),
    ("decoder", {"feature_set": "decoder"}),
    ("both", {"feature_set": "both"}),
)
DEFAULT_ALPHAS = (0.01, 0.1, 1.0, 10.0)


@dataclass
class RunConfig:
    """A validated run: model settings plus data plumbing."""

    model: ModelConfig
    dataset_id: str = "FD001"
    train_file: str = None
    test_file: str = None
    rul_file: str = None
    synth: dict = None
    out: str = "runs"
    checkpoint: str = None
    engine_id: int = 0          # 0 means every engine
    window_stride: int = 1
    dump_windows: bool = False
    cap_test_labels: bool = True
    score_aggregate: str = "sum"


MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))
RUN_ONLY_KEYS = tuple(f.name for f in fields(RunConfig) if f.name != "model")
RUN_KEYS = MODEL_KEYS + RUN_ONLY_KEYS
SYNTH_KEYS = ("fleet_size", "n_sensors", "length_range", "noise_level",
              "seed", "n_conditions", "test_fleet_size")

_MODEL_TYPES = {
    "n_sensors": int, "seq_len": int, "hidden": int, "attention_width": int,
    "batch_size": int, "epochs": int, "seed": int, "rul_cap": int,
    "alpha": (int, float), "learning_rate": (int, float),
    "dropout": (int, float), "grad_clip": (int, float),
    "use_attention": bool, "use_reconstruction": bool,
    "feature_set": str, "predictor_hidden": (list, tuple),
}
_RUN_TYPES = {
    "dataset_id": str, "train_file": str, "test_file": str, "rul_file": str,
    "synth": dict, "out": str, "checkpoint": str, "engine_id": int,
    "window_stride": int, "dump_windows": bool, "cap_test_labels": bool,
    "score_aggregate": str,
}


def _type_ok(value, expected):
    if expected is int or expected is bool:
        return isinstance(value, expected) and not (
            expected is int and isinstance(value, bool))
    if isinstance(expected, tuple) and int in expected:
        return isinstance(value, expected) and not isinstance(value, bool)
    return isinstance(value, expected)


def _type_name(expected):
    if isinstance(expected, tuple):
        return " or ".join(t.__name__ for t in expected)
    return expected.__name__


def build_run_config(raw):
    """Turn a raw key-value mapping into (RunConfig, problem list).

    Every violation is collected, not just the first; unknown keys get a
    nearest-match suggestion. The RunConfig is still returned so callers can
    report problems against the filled-in defaults.
    """
    problems = []
    clean = {}
    for key, value in raw.items():
        if key not in RUN_KEYS:
            hint = difflib.get_close_matches(key, RUN_KEYS, n=1)
            suffix = f" (did you mean '{hint[0]}'?)" if hint else ""
            problems.append(f"unknown key '{key}'{suffix}")
            continue
        expected = _MODEL_TYPES.get(key) or _RUN_TYPES.get(key)
        if value is not None and not _type_ok(value, expected):
            problems.append(f"{key} must be {_type_name(expected)}, "
                            f"got {value!r}")
            continue
        clean[key] = value

    dataset_id = clean.get("dataset_id", "FD001")
    profile = data_mod.DATASETS.get(dataset_id)
    if profile is None:
        problems.append(f"dataset_id must be one of "
                        f"{sorted(data_mod.DATASETS)}, got {dataset_id!r}")
        profile = data_mod.DATASETS["FD001"]

    # a JSON null means "use the default"
    clean = {k: v for k, v in clean.items() if v is not None}
    model_raw = {k: v for k, v in clean.items() if k in MODEL_KEYS}
    if "predictor_hidden" in model_raw:
        widths = model_raw["predictor_hidden"]
        if not all(isinstance(w, int) and not isinstance(w, bool) for w in widths):
            problems.append(f"predictor_hidden must be a list of ints, "
                            f"got {widths!r}")
            del model_raw["predictor_hidden"]
    model_raw.setdefault("n_sensors", len(profile.sensor_ids))
    model_raw.setdefault("rul_cap", profile.rul_cap)
    model = ModelConfig.from_dict(model_raw)
    problems.extend(model.problems())
    if model.n_sensors != len(profile.sensor_ids):
        problems.append(
            f"n_sensors={model.n_sensors} does not match the {dataset_id} "
            f"sensor subset ({len(profile.sensor_ids)} channels)")

    run_raw = {k: v for k, v in clean.items() if k in RUN_ONLY_KEYS}
    run_raw["dataset_id"] = dataset_id
    cfg = RunConfig(model=model, **run_raw)

    if cfg.engine_id < 0:
        problems.append(f"engine_id must be >= 0, got {cfg.engine_id}")
    if cfg.window_stride < 1:
        problems.append(f"window_stride must be >= 1, got {cfg.window_stride}")
    if cfg.score_aggregate not in ("sum", "mean"):
        problems.append(f"score_aggregate must be 'sum' or 'mean', "
                        f"got {cfg.score_aggregate!r}")

    if cfg.synth is not None:
        for key in cfg.synth:
            if key not in SYNTH_KEYS:
                hint = difflib.get_close_matches(key, SYNTH_KEYS, n=1)
                suffix = f" (did you mean 'synth.{hint[0]}'?)" if hint else ""
                problems.append(f"unknown key 'synth.{key}'{suffix}")
        if "fleet_size" not in cfg.synth:
            problems.append("synth.fleet_size is required")
        elif not _type_ok(cfg.synth["fleet_size"], int) or cfg.synth["fleet_size"] < 1:
            problems.append(f"synth.fleet_size must be a positive int, "
                            f"got {cfg.synth['fleet_size']!r}")
        n_raw = cfg.synth.get("n_sensors", data_mod.N_RAW_SENSORS)
        if n_raw != data_mod.N_RAW_SENSORS:
            problems.append(
                f"synth.n_sensors must stay {data_mod.N_RAW_SENSORS} so the "
                f"{dataset_id} sensor subset applies, got {n_raw!r}")

    for key in ("train_file", "test_file", "rul_file", "checkpoint"):
        path = getattr(cfg, key)
        if path is not None and not os.path.isfile(path):
            problems.append(f"{key}: no such file {path!r}")

    return cfg, problems


def _check_sources(cfg, command, problems):
    """Per-command data-source requirements, appended to the problem list."""
    has_synth = cfg.synth is not None
    if command in ("train", "experiment") and not has_synth and cfg.train_file is None:
        problems.append("a training data source is required: "
                        "set synth or train_file")
    if command == "experiment" and not has_synth and (
            cfg.test_file is None or cfg.rul_file is None):
        problems.append("experiment needs test data: "
                        "set synth or test_file and rul_file")
    if command in ("eval", "predict") and cfg.checkpoint is None:
        problems.append("checkpoint is required")
    if command == "eval" and not has_synth and (
            cfg.test_file is None or cfg.rul_file is None):
        problems.append("eval needs test data: set synth or test_file and rul_file")
    if command == "predict" and not has_synth and cfg.test_file is None:
        problems.append("predict needs test data: set synth or test_file")
    if command == "synth" and not has_synth:
        problems.append("the synth subcommand needs a synth block "
                        "(at least synth.fleet_size)")


# ---- data plumbing ----------------------------------------------------------


def _synth_fleet(cfg):
    args = dict(cfg.synth)
    profile = data_mod.DATASETS[cfg.dataset_id]
    args.setdefault("n_conditions", profile.n_conditions)
    args.setdefault("seed", cfg.model.seed)
    return data_mod.synth_generate(**args)


def _load_train_trajs(cfg):
    if cfg.synth is not None:
        train, _, _ = _synth_fleet(cfg)
        return train
    return data_mod.parse_cmapss(cfg.train_file)


def _load_test_trajs(cfg, need_rul):
    if cfg.synth is not None:
        _, test, rul = _synth_fleet(cfg)
        return test, rul
    test = data_mod.parse_cmapss(cfg.test_file)
    rul = data_mod.parse_rul_file(cfg.rul_file) if need_rul else None
    return test, rul


def _prepare_training(cfg):
    """Parse, select sensors, fit normalization, and cut training windows."""
    trajs = [data_mod.select_sensors(t, cfg.dataset_id)
             for t in _load_train_trajs(cfg)]
    table = data_mod.cluster_conditions(trajs)
    stats = data_mod.fit_normalizer(trajs, table)
    samples = []
    for traj in trajs:
        normalized = data_mod.apply_normalizer(traj, stats, table)
        samples.extend(data_mod.segment_windows(
            normalized, cfg.model.seq_len, stride=cfg.window_stride,
            rul_cap=cfg.model.rul_cap))
    if not samples:
        raise data_mod.DataError(
            f"no training windows: every engine is shorter than "
            f"seq_len={cfg.model.seq_len}")
    return samples, stats, table


def _prepare_test(cfg, mcfg, stats, table, need_rul=True):
    trajs, rul = _load_test_trajs(cfg, need_rul)
    selected = [data_mod.select_sensors(t, cfg.dataset_id) for t in trajs]
    normalized = [data_mod.apply_normalizer(t, stats, table) for t in selected]
    if rul is None:
        rul = [0.0] * len(normalized)
        cap = False
    else:
        cap = cfg.cap_test_labels
    if len(rul) != len(normalized):
        raise data_mod.DataError(
            f"{len(rul)} RUL values for {len(normalized)} test engines")
    return data_mod.build_test_set(normalized, rul, mcfg.seq_len,
                                   rul_cap=mcfg.rul_cap, cap_labels=cap)


def _evaluate(cfg, mcfg, params, samples):
    X = np.stack([s.X for s in samples])
    preds = model_mod.predict_windows(params, mcfg, X)
    return EvalResult.from_predictions(
        [s.engine_id for s in samples], preds,
        [s.rul for s in samples], cfg.score_aggregate)


# ---- subcommands --------------------------------------------------------------


def cmd_train(cfg):
    samples, stats, table = _prepare_training(cfg)
    log.info("training on %d windows", len(samples))
    params, history = model_mod.fit(samples, cfg.model)
    os.makedirs(cfg.out, exist_ok=True)
    ckpt = cfg.checkpoint or os.path.join(cfg.out, "model.ckpt")
    model_mod.save_checkpoint(ckpt, params, cfg.model, stats, table)
    history_path = os.path.join(cfg.out, "history.json")
    with open(history_path, "w") as fh:
        json.dump(history.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if cfg.dump_windows:
        data_mod.dump_windows_csv(samples, os.path.join(cfg.out, "train_windows.csv"))
    last = history.epochs[-1]
    print(f"trained {len(samples)} windows for {cfg.model.epochs} epochs, "
          f"final joint loss {last.joint:.6f}")
    print(f"checkpoint written: {ckpt}")
    return 0


def cmd_eval(cfg):
    params, mcfg, stats, table = model_mod.load_checkpoint(cfg.checkpoint)
    samples = _prepare_test(cfg, mcfg, stats, table)
    result = _evaluate(cfg, mcfg, params, samples)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "report.csv")
    report(result, path)
    print(f"rmse={result.rmse!r}")
    print(f"score={result.score!r}")
    print(f"report written: {path}")
    return 0


def cmd_predict(cfg):
    params, mcfg, stats, table = model_mod.load_checkpoint(cfg.checkpoint)
    samples = _prepare_test(cfg, mcfg, stats, table, need_rul=False)
    if cfg.engine_id:
        samples = [s for s in samples if s.engine_id == cfg.engine_id]
        if not samples:
            raise data_mod.DataError(f"engine {cfg.engine_id} not in test data")
    X = np.stack([s.X for s in samples])
    preds = model_mod.predict_windows(params, mcfg, X)
    for sample, value in zip(samples, preds):
        print(f"{sample.engine_id} {value:.6f}")
    return 0


def cmd_gradcheck(seed, epsilon):
    """Analytic vs central-difference gradients on a tiny full model.

    The default step is one decade above the single-op default: the joint
    loss is orders of magnitude larger than an op-level test function, so
    the roundoff term |f|*u/(2*eps) needs the bigger step to stay below
    the reporting threshold on near-zero gradient coordinates.
    """
    cfg = ModelConfig(n_sensors=3, seq_len=5, hidden=4, attention_width=4,
                      predictor_hidden=(4,), dropout=0.0, seed=seed)
    params = nn.init_params(cfg, np.random.default_rng(seed), dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    X = rng.normal(size=(2, 3, 5))
    Y = rng.normal(size=(2, 3, 5))
    rul = rng.uniform(0.0, 10.0, size=(2, 1))

    def loss_fn():
        Y_hat, rul_hat, diag = model_mod.forward_pass(X, Y, params, cfg,
                                                      mode="teacher")
        total, _, _ = model_mod.joint_loss(
            Y_hat, diag["targets"], rul_hat,
            Tensor(rul.astype(np.float64)), cfg.alpha)
        return total

    leaves = [t for _, t in params.tensors()]
    worst = grad_check(loss_fn, leaves, epsilon=epsilon)
    verdict = "PASS" if worst < GRADCHECK_THRESHOLD else "FAIL"
    print(f"max relative gradient error {worst:.3e} "
          f"(threshold {GRADCHECK_THRESHOLD:g}, epsilon {epsilon:g}): {verdict}")
    return 0 if worst < GRADCHECK_THRESHOLD else 3


def cmd_synth(cfg):
    train, test, rul = _synth_fleet(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    paths = {name: os.path.join(cfg.out, f"{name}_synth.txt")
             for name in ("train", "test", "rul")}
    with open(paths["train"], "w") as fh:
        fh.write(data_mod.serialize_cmapss(train))
    with open(paths["test"], "w") as fh:
        fh.write(data_mod.serialize_cmapss(test))
    with open(paths["rul"], "w") as fh:
        fh.writelines(f"{v:g}\n" for v in rul)
    print(f"synthetic fleet: {len(train)} train engines, "
          f"{len(test)} test engines")
    for name in ("train", "test", "rul"):
        print(f"{name} written: {paths[name]}")
    return 0


def _experiment_variants(suite, values):
    if suite == "ablation":
        return ABLATION_VARIANTS
    if suite == "features":
        return FEATURE_VARIANTS
    alphas = values if values is not None else DEFAULT_ALPHAS
    return tuple((f"alpha={a:g}", {"alpha": float(a)}) for a in alphas)


def cmd_experiment(cfg, suite, values):
    variants = _experiment_variants(suite, values)
    configs = []
    problems = []
    for name, delta in variants:
        mcfg = replace(cfg.model, **delta)
        problems.extend(f"{name}: {p}" for p in mcfg.problems())
        configs.append((name, mcfg))
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2

    samples, stats, table = _prepare_training(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    rows = []
    for name, mcfg in configs:
        echo = {"variant": name, "config": mcfg.to_dict()}
        print(json.dumps(echo, sort_keys=True))
        with open(os.path.join(cfg.out, f"{name}_config.json"), "w") as fh:
            json.dump(echo, fh, indent=2, sort_keys=True)
            fh.write("\n")
        params, _ = model_mod.fit(samples, mcfg)
        test_samples = _prepare_test(cfg, mcfg, stats, table)
        result = _evaluate(cfg, mcfg, params, test_samples)
        rows.append((name, result.rmse, result.score))

    lines = ["variant,rmse,score"]
    lines.extend(f"{name},{r!r},{s!r}" for name, r, s in rows)
    text = "\n".join(lines) + "\n"
    path = os.path.join(cfg.out, f"experiment_{suite}.csv")
    with open(path, "w") as fh:
        fh.write(text)
    print(text, end="")
    print(f"table written: {path}")
    return 0


# ---- argument handling ---------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1; argparse's default would exit 2, which is
    # reserved for config validation
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _alpha_list(text):
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty value list")
    return values


def build_parser():
    parser = _Parser(prog="ats2s", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    def _common(p):
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--seed", type=int, metavar="N",
                       help="override the seed key")
        p.add_argument("--out", metavar="DIR",
                       help="override the output directory key")
        p.epilog = ("any remaining key=value arguments override config keys "
                    "(values parsed as JSON)")

    _common(sub.add_parser("train", help="fit the model and write a checkpoint"))
    _common(sub.add_parser("eval",
                           help="score a checkpoint on test data and write a report"))
    _common(sub.add_parser("predict", help="print predicted RUL for test engines"))
    _common(sub.add_parser("synth",
                           help="write a synthetic fleet in C-MAPSS text format"))
    exp = sub.add_parser("experiment",
                         help="run an ablation, feature, or alpha suite")
    exp.add_argument("suite", choices=("ablation", "features", "alpha"))
    exp.add_argument("--values", type=_alpha_list, metavar="A,B,...",
                     help="alpha values for the alpha suite")
    _common(exp)

    check = sub.add_parser("gradcheck",
                           help="compare analytic and numeric gradients")
    check.add_argument("--seed", type=int, default=0, metavar="N")
    check.add_argument("--epsilon", type=float, default=1e-4, metavar="E")
    return parser


def _parse_overrides(pairs):
    raw = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if pair.startswith("-") or not sep or not key:
            raise SystemExit(_usage_error(
                f"unrecognized argument {pair!r} (overrides are key=value)"))
        try:
            raw[key] = json.loads(value)
        except json.JSONDecodeError:
            raw[key] = value
    return raw


def _usage_error(message):
    print(f"ats2s: error: {message}", file=sys.stderr)
    return 1


def _gather_config(args, overrides, command):
    raw = {}
    if args.config is not None:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except OSError as exc:
            print(f"config error: cannot read {args.config!r}: {exc}",
                  file=sys.stderr)
            return None
        except json.JSONDecodeError as exc:
            print(f"config error: {args.config} is not valid JSON: {exc}",
                  file=sys.stderr)
            return None
        if not isinstance(raw, dict):
            print(f"config error: {args.config} must hold a JSON object",
                  file=sys.stderr)
            return None
    raw.update(_parse_overrides(overrides))
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out

    cfg, problems = build_run_config(raw)
    _check_sources(cfg, command, problems)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return None
    return cfg


def main(argv=None):
    level = os.environ.get("ATS2S_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1

    if args.command == "gradcheck":
        if extras:
            return _usage_error(f"unrecognized arguments: {' '.join(extras)}")
        return cmd_gradcheck(args.seed, args.epsilon)

    try:
        cfg = _gather_config(args, extras, args.command)
    except SystemExit as exc:
        return int(exc.code or 0)
    if cfg is None:
        return 2

    try:
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "predict":
            return cmd_predict(cfg)
        if args.command == "synth":
            return cmd_synth(cfg)
        return cmd_experiment(cfg, args.suite, args.values)
    except (data_mod.ParseError, data_mod.DataError, model_mod.TrainingDiverged,
            model_mod.CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
