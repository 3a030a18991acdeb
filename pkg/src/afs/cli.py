"""Command-line entry point.

Settings come from built-in defaults, then an optional TOML file (or the
``config`` block of an earlier run manifest), then ``--set section.key=value``
pairs, then the dedicated flags of each command. Every command writes its
artifacts plus ``manifest.json`` into one output directory, and nothing is
written until all computation has finished.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration,
3 dataset or checkpoint problem.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .attention import AttentionConfig
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    DatasetError,
    kfold_splits,
    load_csv,
    load_idx,
    synthesize_awgn,
    synthesize_motion_blur,
    synthesize_rc_awgn,
    write_csv,
    write_idx,
)
from .evaluation import (
    ClassifierConfig,
    accuracy,
    accuracy_curve,
    average_accuracy,
    cross_validated_curve,
    export_heatmap,
    export_weights,
    import_weights,
    k_grid,
    rank_features,
    train_classifier,
)
from .learner import LearnerConfig
from .nn import AdamConfig, ContractError
from .trainer import (
    BASE_METHODS,
    PretrainConfig,
    TrainConfig,
    base_weights,
    finetune_reused,
    hybrid_init_train,
    train_afs,
)

log = logging.getLogger("afs")

OUTPUT_ROOT_ENV = "AFS_OUTPUT_ROOT"
MNIST_DIR_ENV = "AFS_MNIST_DIR"
IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class ConfigError(Exception):
    """Exit code 2."""


def _defaults() -> dict:
    adam = TrainConfig().adam
    att = AttentionConfig(input_dim=1)
    clf = ClassifierConfig()
    pre = PretrainConfig()
    train = TrainConfig()
    return {
        "dataset": {"format": "idx", "dir": os.environ.get(MNIST_DIR_ENV, "data/mnist"),
                    "train": "", "test": "", "label_column": "label"},
        "train": {"steps": train.steps, "batch_size": train.batch_size, "lam": train.lam,
                  "seed": train.seed, "log_every": train.log_every},
        "adam": {"learning_rate": adam.learning_rate, "beta1": adam.beta1, "beta2": adam.beta2,
                 "epsilon": adam.epsilon},
        "attention": {"n_e": att.n_e, "hidden_layers": att.hidden_layers, "hidden_width": att.hidden_width},
        "learner": {"hidden": 500, "activation": "relu"},
        "pretrain": {"steps": pre.steps, "batch_size": pre.batch_size, "lam": pre.lam, "tol": pre.tol,
                     "learning_rate": pre.adam.learning_rate},
        "relieff": {"k_neighbors": 5, "sample_count": 0, "seed": 0},
        "classifier": {"hidden": clf.hidden, "steps": clf.steps, "batch_size": clf.batch_size,
                       "lam": clf.lam, "seed": clf.seed, "learning_rate": clf.adam.learning_rate},
        "eval": {"k_min": 15, "k_max": 295, "k_step": 10},
        "cv": {"repeats": 3, "folds": 3, "seed": 0},
    }


def _merge(base: dict, update: dict, origin: str) -> None:
    for section, values in update.items():
        if section not in base:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"{origin}: [{section}] must be a table")
        for key, value in values.items():
            _set(base, section, key, value, origin)


def _set(cfg: dict, section: str, key: str, value, origin: str) -> None:
    if section not in cfg or key not in cfg[section]:
        raise ConfigError(f"{origin}: unknown key {section}.{key}")
    current = cfg[section][key]
    if isinstance(current, bool) or isinstance(value, bool):
        ok = isinstance(current, bool) and isinstance(value, bool)
    elif isinstance(current, float):
        ok = isinstance(value, (int, float))
        value = float(value) if ok else value
    else:
        ok = isinstance(value, type(current))
    if not ok:
        raise ConfigError(f"{origin}: {section}.{key} must be {type(current).__name__}, got {value!r}")
    cfg[section][key] = value


def _parse_scalar(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load_config(path: str | None, overrides: list[str] | None = None) -> dict:
    cfg = _defaults()
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            if p.suffix == ".json":
                doc = json.loads(p.read_text()).get("config", {})
            else:
                doc = tomllib.loads(p.read_text())
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{p}: {exc}") from None
        _merge(cfg, doc, str(p))
    for item in overrides or []:
        name, sep, raw = item.partition("=")
        section, dot, key = name.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        _set(cfg, section.strip(), key.strip(), _parse_scalar(raw.strip()), "--set")
    return cfg


# -- building library objects from the config ------------------------------------


def _adam(section: dict) -> AdamConfig:
    return AdamConfig(section["learning_rate"], section.get("beta1", 0.9), section.get("beta2", 0.999),
                      section.get("epsilon", 1e-8))


def train_config(cfg: dict, d: int, classes: int) -> TrainConfig:
    t, a, ln = cfg["train"], cfg["attention"], cfg["learner"]
    return TrainConfig(
        steps=t["steps"], batch_size=t["batch_size"], lam=t["lam"], seed=t["seed"], log_every=t["log_every"],
        adam=_adam(cfg["adam"]),
        attention=AttentionConfig(d, a["n_e"], a["hidden_layers"], a["hidden_width"]),
        learner=LearnerConfig((d, ln["hidden"], classes), activation=ln["activation"]),
    )


def pretrain_config(cfg: dict) -> PretrainConfig:
    p = cfg["pretrain"]
    adam = AdamConfig(p["learning_rate"], cfg["adam"]["beta1"], cfg["adam"]["beta2"], cfg["adam"]["epsilon"])
    return PretrainConfig(p["steps"], p["batch_size"], p["lam"], p["tol"], adam)


def classifier_config(cfg: dict) -> ClassifierConfig:
    c = cfg["classifier"]
    return ClassifierConfig(hidden=c["hidden"], steps=c["steps"], batch_size=c["batch_size"], lam=c["lam"],
                            seed=c["seed"], adam=AdamConfig(c["learning_rate"]))


def relieff_kwargs(cfg: dict) -> dict:
    r = cfg["relieff"]
    return {"k_neighbors": r["k_neighbors"], "sample_count": r["sample_count"] or None, "seed": r["seed"]}


def load_datasets(cfg: dict):
    """(train, test-or-None) according to the [dataset] section."""
    ds = cfg["dataset"]
    if ds["format"] == "idx":
        root = Path(ds["dir"])
        train = load_idx(*(root / f for f in IDX_FILES["train"]), name="train")
        test_files = [root / f for f in IDX_FILES["test"]]
        test = load_idx(*test_files, name="test") if all(f.exists() for f in test_files) else None
        if test is not None:
            train.meta["split"] = f"fixed train/test files ({train.m}/{test.m})"
        return train, test
    if ds["format"] == "csv":
        if not ds["train"]:
            raise ConfigError("dataset.train must name a CSV file when dataset.format = 'csv'")
        train = load_csv(ds["train"], ds["label_column"])
        test = None
        if ds["test"]:
            test = load_csv(ds["test"], ds["label_column"])
            if test.d != train.d:
                raise DatasetError(f"test CSV has {test.d} features, train CSV has {train.d}")
            # both files must share one label coding
            names = train.meta["label_values"]
            extra = [v for v in test.meta["label_values"] if v not in names]
            mapping = {v: i for i, v in enumerate(names + extra)}
            test.labels = np.array([mapping[test.meta["label_values"][i]] for i in test.labels])
            test.class_count = train.class_count = len(mapping)
        return train, test
    raise ConfigError(f"dataset.format must be 'idx' or 'csv', got {ds['format']!r}")


# -- manifest and output -------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict = field(default_factory=dict)
    datasets: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    wall_time: float = 0.0
    argv: list = field(default_factory=list)
    version: str = __version__

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        tmp = out_dir / "manifest.json.tmp"
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)
        return path


class Output:
    """Collects artifacts in a staging directory and publishes them together."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.out_dir.parent.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out_dir.parent))
        self.names: list[str] = []

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.stage / name

    def publish(self, manifest: RunManifest) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for name in self.names:
            dest = self.out_dir / name
            os.replace(self.stage / name, dest)
            manifest.artifacts[name] = {"path": str(dest), "sha256": _sha256(dest)}
        shutil.rmtree(self.stage, ignore_errors=True)
        return manifest.write(self.out_dir)

    def discard(self) -> None:
        shutil.rmtree(self.stage, ignore_errors=True)


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "afs-runs")) / args.command


def _fingerprints(*datasets) -> dict:
    return {d.name: {"sha256": d.fingerprint(), "m": d.m, "d": d.d, **({"split": d.meta["split"]} if "split" in d.meta else {})}
            for d in datasets if d is not None}


# -- commands --------------------------------------------------------------------


def _apply_train_flags(cfg: dict, args) -> None:
    for flag, key in (("steps", "steps"), ("seed", "seed"), ("batch_size", "batch_size"), ("lam", "lam")):
        value = getattr(args, flag, None)
        if value is not None:
            _set(cfg, "train", key, value, f"--{flag.replace('_', '-')}")


def cmd_train(args, cfg, out: Output, manifest: RunManifest) -> None:
    train, test = load_datasets(cfg)
    tc = train_config(cfg, train.d, train.class_count)
    result = train_afs(train, tc)
    save_checkpoint(out.path("checkpoint.afs"), result.attention, result.learner)
    export_weights(result.weights, "afs", out.path("weights.csv"))
    result.report.to_csv(out.path("report.csv"))
    manifest.seeds["train"] = tc.seed
    manifest.datasets = _fingerprints(train)
    manifest.results = {"train_seconds": result.report.wall_time, "final_objective": result.trace[-1] if result.trace else None}


def cmd_hybrid(args, cfg, out, manifest) -> None:
    if args.base not in BASE_METHODS:
        raise ConfigError(f"unknown base method {args.base!r}; choose from {', '.join(BASE_METHODS)}")
    train, _ = load_datasets(cfg)
    tc = train_config(cfg, train.d, train.class_count)
    hyb = hybrid_init_train(train, args.base, pretrain_config(cfg), tc, relieff_kwargs(cfg))
    res = hyb.result
    save_checkpoint(out.path("checkpoint.afs"), res.attention, res.learner)
    export_weights(res.weights, f"afs-{args.base}", out.path("weights.csv"))
    export_weights(hyb.base.w, args.base, out.path("base_weights.csv"))
    export_weights(hyb.pretrained_weights, f"pretrained-{args.base}", out.path("pretrained_weights.csv"))
    res.report.to_csv(out.path("report.csv"))
    manifest.seeds["train"] = tc.seed
    if args.base == "relieff":
        manifest.seeds["relieff"] = cfg["relieff"]["seed"]
    manifest.datasets = _fingerprints(train)
    manifest.results = {"base_method": args.base, "w_fs": hyb.target.tolist(),
                        "pretrain_steps_run": hyb.pretrain.steps_run,
                        "pretrain_final_mse": hyb.pretrain.mse_trace[-1] if hyb.pretrain.mse_trace else None}


def cmd_reuse(args, cfg, out, manifest) -> None:
    mode = {"global": "global_tune", "local": "local_tune"}[args.mode]
    train, _ = load_datasets(cfg)
    tc = train_config(cfg, train.d, train.class_count)
    meta, _ = load_checkpoint(args.checkpoint)
    echo = meta.get("config", {}).get("learner")
    if echo is None:
        raise CheckpointError(f"{args.checkpoint}: no learner tensors in checkpoint")
    sizes = tuple(echo["layer_sizes"])
    if sizes[0] != train.d or sizes[-1] < train.class_count:
        raise CheckpointError(f"{args.checkpoint}: learner {sizes} does not fit a dataset with d={train.d} "
                              f"and {train.class_count} classes")
    tc = replace(tc, learner=LearnerConfig(sizes, echo.get("task", "classification"), echo.get("activation", "relu")))
    start = time.perf_counter()
    res = finetune_reused(train, args.checkpoint, mode, args.steps, tc)
    elapsed = time.perf_counter() - start
    save_checkpoint(out.path("checkpoint.afs"), res.attention, res.learner)
    export_weights(res.weights, f"afs-r-{args.mode}", out.path("weights.csv"))
    res.report.to_csv(out.path("report.csv"))
    manifest.seeds["train"] = tc.seed
    manifest.datasets = _fingerprints(train)
    manifest.results = {"mode": mode, "steps": args.steps, "learner_frozen": res.learner.frozen,
                        "source_checkpoint": str(args.checkpoint), "seconds": elapsed}


def cmd_classifier(args, cfg, out, manifest) -> None:
    train, test = load_datasets(cfg)
    cc = classifier_config(cfg)
    params = train_classifier(train, cc)
    save_checkpoint(out.path("learner.afs"), learner=params)
    manifest.seeds["classifier"] = cc.seed
    manifest.datasets = _fingerprints(train, test)
    manifest.results = {"train_accuracy": accuracy(params, train)}
    if test is not None:
        manifest.results["test_accuracy"] = accuracy(params, test)


def _parse_pair(text: str, sep: str, what: str) -> tuple[int, int]:
    a, s, b = text.lower().partition(sep)
    try:
        pair = int(a), int(b)
    except ValueError:
        raise ConfigError(f"{what} must look like N{sep}M, got {text!r}") from None
    if not s or min(pair) < 1:
        raise ConfigError(f"{what} must look like N{sep}M with positive numbers, got {text!r}")
    return pair


def _method_selector(method: str, cfg: dict):
    def select(train, cell):
        if method in BASE_METHODS:
            return base_weights(train, method, relieff_kwargs(cfg)).w
        if method == "afs":
            return train_afs(train, train_config(cfg, train.d, train.class_count)).weights
        if method.startswith("afs-"):
            tc = train_config(cfg, train.d, train.class_count)
            return hybrid_init_train(train, method[4:], pretrain_config(cfg), tc, relieff_kwargs(cfg)).result.weights
        raise ConfigError(f"unknown method {method!r}")
    return select


EVAL_METHODS = ("afs", "fisher", "relieff", "afs-fisher", "afs-relieff")


def cmd_eval(args, cfg, out, manifest) -> None:
    if (args.weights is None) == (args.method is None):
        raise ConfigError("pass exactly one of --weights or --method")
    if args.method is not None and args.method not in EVAL_METHODS:
        raise ConfigError(f"unknown method {args.method!r}; choose from {', '.join(EVAL_METHODS)}")
    for flag in ("k_min", "k_max", "k_step"):
        if getattr(args, flag) is not None:
            _set(cfg, "eval", flag, getattr(args, flag), f"--{flag.replace('_', '-')}")
    avg = _parse_pair(args.avg, ":", "--avg") if args.avg else None
    cv = None
    if args.cv:
        repeats, folds = _parse_pair(args.cv, "x", "--cv")
        _set(cfg, "cv", "repeats", repeats, "--cv")
        _set(cfg, "cv", "folds", folds, "--cv")
        cv = cfg["cv"]
    e = cfg["eval"]
    ks = k_grid(e["k_min"], e["k_max"], e["k_step"])
    if not ks:
        raise ConfigError(f"empty K grid {e}")
    train, test = load_datasets(cfg)
    if ks[-1] > train.d:
        raise ConfigError(f"K grid reaches {ks[-1]} but the dataset has {train.d} features")
    cc = classifier_config(cfg)
    method = args.method
    weights = None
    if args.weights is not None:
        try:
            weights, method = import_weights(args.weights)
        except (FileNotFoundError, ContractError) as exc:
            raise ConfigError(str(exc)) from None
        if weights.size != train.d:
            raise ConfigError(f"{args.weights} has {weights.size} weights, dataset has {train.d} features")
    if cv is not None:
        if weights is not None:
            raise ConfigError("--cv recomputes weights per fold, so it needs --method rather than --weights")
        data = train if test is None else _joined(train, test)
        plan = kfold_splits(data.m, cv["folds"], cv["repeats"], cv["seed"], data.labels)
        if plan.warning:
            log.warning(plan.warning)
        res = cross_validated_curve(data, plan, _method_selector(method, cfg), ks, cc, method, args.jobs)
        curve = res.curve
        manifest.seeds["cv"] = cv["seed"]
        manifest.results["cv"] = {"repeats": cv["repeats"], "folds": cv["folds"], "stratified": plan.stratified}
        manifest.datasets = _fingerprints(data)
    else:
        if test is None:
            raise ConfigError("the dataset has no test split; set dataset.test or use --cv")
        if weights is None:
            weights = _method_selector(method, cfg)(train, 0)
            export_weights(weights, method, out.path("weights.csv"))
        curve = accuracy_curve(train, test, rank_features(weights), ks, cc, method, args.jobs)
        manifest.datasets = _fingerprints(train, test)
    curve.to_csv(out.path("curve.csv"))
    manifest.seeds["classifier"] = cc.seed
    manifest.results.update({"method": method, "curve": curve.as_dict()})
    if avg is not None:
        value = average_accuracy(curve, *avg)
        manifest.results[f"average_{avg[0]}_{avg[1]}"] = value
        print(f"average accuracy K in [{avg[0]}, {avg[1]}]: {value:.4f}")


def _joined(train, test):
    from .data import concat
    return concat(train, test, name=f"{train.name}+{test.name}")


def cmd_synth(args, cfg, out, manifest) -> None:
    if args.seed is None:
        raise ConfigError("synth needs an explicit --seed so the noisy data can be reproduced")
    train, test = load_datasets(cfg)
    params = {"noise": args.noise, "seed": args.seed}

    def apply(ds, part):
        seed = [args.seed, part]
        if args.noise == "awgn":
            params["snr_db"] = args.snr_db
            return synthesize_awgn(ds, args.snr_db, seed)
        if args.noise == "mb":
            params.update(length=args.length, angle_deg=args.angle)
            return synthesize_motion_blur(ds, args.length, args.angle)
        params.update(contrast=args.contrast, snr_db=args.snr_db)
        return synthesize_rc_awgn(ds, args.contrast, args.snr_db, seed)

    parts = [("train", 0, train)] + ([("test", 1, test)] if test is not None else [])
    for part, tag, ds in parts:
        noisy = apply(ds, tag)
        if cfg["dataset"]["format"] == "idx":
            img, lab = IDX_FILES[part]
            write_idx(noisy, out.path(img), out.path(lab))
        else:
            write_csv(noisy, out.path(f"{part}.csv"), cfg["dataset"]["label_column"])
    manifest.seeds["noise"] = args.seed
    manifest.datasets = _fingerprints(*(ds for _, _, ds in parts))
    manifest.results = params


def cmd_heatmap(args, cfg, out, manifest) -> None:
    rows, cols = _parse_pair(args.shape, "x", "--shape")
    try:
        tiers = [int(t) for t in args.tiers.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--tiers must be comma-separated integers, got {args.tiers!r}") from None
    try:
        weights, method = import_weights(args.weights)
    except (FileNotFoundError, ContractError) as exc:
        raise ConfigError(str(exc)) from None
    if rows * cols != weights.size:
        raise ConfigError(f"--shape {rows}x{cols} does not match {weights.size} weights")
    if tiers and not 1 <= min(tiers) <= max(tiers) <= weights.size:
        raise ConfigError(f"tiers must lie in [1, {weights.size}], got {tiers}")
    export_heatmap(rank_features(weights), tiers, rows, cols, out.path("heatmap.pgm"))
    manifest.results = {"method": method, "tiers": tiers, "shape": [rows, cols]}


COMMANDS = {
    "train": cmd_train,
    "hybrid": cmd_hybrid,
    "reuse": cmd_reuse,
    "classifier": cmd_classifier,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "heatmap": cmd_heatmap,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afs", description="Attention-based supervised feature selection.")
    parser.add_argument("--version", action="version", version=f"afs {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file, or a manifest.json from an earlier run")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")
    common.add_argument("--data-dir", help="directory holding the four MNIST IDX files")
    common.add_argument("--csv", help="training CSV (switches dataset.format to csv)")
    common.add_argument("--test-csv", help="test CSV")
    common.add_argument("--label-column")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel curve points")
    common.add_argument("-v", "--verbose", action="store_true")

    train_flags = argparse.ArgumentParser(add_help=False)
    train_flags.add_argument("--steps", type=int)
    train_flags.add_argument("--seed", type=int)
    train_flags.add_argument("--batch-size", type=int)
    train_flags.add_argument("--lam", type=float)

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common, train_flags], help="train AFS and export feature weights")
    p = sub.add_parser("hybrid", parents=[common, train_flags], help="filter-method warm start, then AFS")
    p.add_argument("--base", default="fisher")
    p = sub.add_parser("reuse", parents=[common], help="AFS on top of a pretrained learner")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("global", "local"), default="global")
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--seed", type=int)
    sub.add_parser("classifier", parents=[common], help="train a plain dense classifier (reuse source)")
    p = sub.add_parser("eval", parents=[common], help="top-K accuracy curve of a ranking")
    p.add_argument("--weights", help="weights CSV to evaluate")
    p.add_argument("--method", help=f"compute weights instead: {', '.join(EVAL_METHODS)}")
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--k-step", type=int)
    p.add_argument("--cv", metavar="RxF", help="repeated k-fold, e.g. 3x3")
    p.add_argument("--avg", metavar="LO:HI", help="also report the mean accuracy over K in [LO, HI]")
    p = sub.add_parser("synth", parents=[common], help="write a noisy copy of the dataset")
    p.add_argument("--noise", choices=("awgn", "mb", "rcawgn"), required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--snr-db", type=float, default=9.5)
    p.add_argument("--length", type=int, default=5)
    p.add_argument("--angle", type=float, default=15.0)
    p.add_argument("--contrast", type=float, default=0.5)
    p = sub.add_parser("heatmap", parents=[common], help="PGM of selection tiers")
    p.add_argument("--weights", required=True)
    p.add_argument("--tiers", default="65,165,350")
    p.add_argument("--shape", default="28x28")
    return parser


def _resolve(args) -> dict:
    cfg = load_config(args.config, args.set)
    if args.data_dir:
        _set(cfg, "dataset", "format", "idx", "--data-dir")
        _set(cfg, "dataset", "dir", args.data_dir, "--data-dir")
    if args.csv:
        _set(cfg, "dataset", "format", "csv", "--csv")
        _set(cfg, "dataset", "train", args.csv, "--csv")
    if args.test_csv:
        _set(cfg, "dataset", "test", args.test_csv, "--test-csv")
    if args.label_column:
        _set(cfg, "dataset", "label_column", args.label_column, "--label-column")
    if args.command in ("train", "hybrid"):
        _apply_train_flags(cfg, args)
    elif args.command == "reuse" and args.seed is not None:
        _set(cfg, "train", "seed", args.seed, "--seed")
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    return cfg


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        cfg = _resolve(args)
        manifest = RunManifest(args.command, copy.deepcopy(cfg), argv=list(argv))
        out = Output(_out_dir(args))
        start = time.perf_counter()
        COMMANDS[args.command](args, cfg, out, manifest)
        manifest.config = cfg
        manifest.wall_time = time.perf_counter() - start
        path = out.publish(manifest)
        print(f"wrote {path}")
        return 0
    except ConfigError as exc:
        code, msg = 2, f"invalid configuration: {exc}"
    except ContractError as exc:
        code, msg = 2, f"invalid configuration: {exc}"
    except (DatasetError, CheckpointError, FileNotFoundError) as exc:
        code, msg = 3, f"dataset error: {exc}"
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        code, msg = 1, f"error: {type(exc).__name__}: {exc}"
    if out is not None:
        out.discard()
    print(msg, file=sys.stderr)
    return code


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
