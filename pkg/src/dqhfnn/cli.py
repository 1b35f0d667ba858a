"""Command-line entry point: ``dqhfnn <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure (non-finite loss or a failed gradient check).

Run configs are INI files. Every key is listed in ``CONFIG_SCHEMA``;
unknown sections or keys are rejected.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from .characterize import DEFAULT_BINS, DEFAULT_PAIRS, DEFAULT_SAMPLES, entangling_capability, expressibility
from .circuits import REGISTRY, registry_lookup
from .data import (
    DataFormatError,
    Dataset,
    Perturbation,
    load_manifest,
    load_splits,
    perturb_batch,
    write_digits_csv,
    write_manifest,
)
from .model import DQHFNN, ModelConfig, Preprocessor, init_quantum_params, load_checkpoint, save_checkpoint
from .nn import prediction_divergence
from .noise import CHANNEL_KINDS, fidelity_sweep, parse_gamma_grid
from .pairing import PairingConfig, build_plan
from .train import NumericError, TrainConfig, evaluate, fit, gradient_check, predict_proba_batched

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _grid(text: str) -> tuple:
    rows, cols = text.lower().split("x")
    return int(rows), int(cols)


CONFIG_SCHEMA = {
    "data": {"manifest": str},
    "model": {"arch": str, "mode": str, "hidden": int, "fusion_dim": int, "dropout": float,
              "clamp_eps": float, "classifier_hidden": _ints},
    "pairing": {"total_pairs": int, "sampling_ratio": float, "random_fraction": float, "grid": _grid,
                "center_bias": _bool, "seed": int, "must_include_hidden": _bool},
    "train": {"optimizer": str, "lr": float, "schedule": str, "milestones": _ints, "factor": float,
              "warmup_epochs": float, "epochs": int, "batch_size": int, "momentum": float,
              "weight_decay": float},
    "run": {"seed": int, "out": str, "workers": int},
}


@dataclass
class RunConfig:
    manifest: str
    model: dict
    pairing: dict
    train: dict
    seed: int
    out: str
    workers: int
    base_dir: str = "."


def read_config(path: Optional[str]) -> dict:
    """Parse and type-check an INI run config into ``{section: {key: value}}``."""
    if path is None:
        return {s: {} for s in CONFIG_SCHEMA}
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} not found")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out = {s: {} for s in CONFIG_SCHEMA}
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in CONFIG_SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                out[section][key] = CONFIG_SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {exc}") from None
    out["_base"] = os.path.dirname(os.path.abspath(path))
    return out


def resolve_run(args) -> RunConfig:
    cfg = read_config(args.config)
    run = cfg["run"]
    seed = args.seed if args.seed is not None else run.get("seed")
    if seed is None:
        raise ConfigError("a seed is required ([run] seed or --seed)")
    model = dict(cfg["model"])
    if getattr(args, "arch", None):
        model["arch"] = args.arch
    if "mode" in model and model["mode"] not in ("hybrid", "quantum_only", "classical_only"):
        raise ConfigError(f"unknown mode {model['mode']!r}")
    manifest = cfg["data"].get("manifest") or getattr(args, "manifest", None)
    if manifest is None:
        raise ConfigError("no dataset manifest given ([data] manifest or --manifest)")
    base = cfg.get("_base", ".")
    if not os.path.isabs(manifest):
        manifest = os.path.join(base, manifest)
    out = args.out or run.get("out") or "."
    workers = args.workers if args.workers is not None else run.get("workers", 1)
    return RunConfig(manifest, model, dict(cfg["pairing"]), dict(cfg["train"]), int(seed), out,
                     int(workers), base)


def comment_header(command: str, seed) -> str:
    return f"# dqhfnn {command} {__version__} seed={seed}"


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _image_shape(ds: Dataset):
    return ds.shape if len(ds.shape) >= 2 else ds.shape[0]


def _build_model(rc: RunConfig, train: Dataset) -> DQHFNN:
    try:
        arch = registry_lookup(rc.model.get("arch", "C"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if arch.excluded_from_training:
        raise ConfigError(f"architecture {arch.name} is excluded from training")
    opts = {k: v for k, v in rc.model.items() if k != "arch"}
    try:
        mcfg = ModelConfig(n_features=train.features.shape[1], n_classes=train.n_classes, arch=arch.name,
                           workers=rc.workers, **opts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from None
    plan = None
    if mcfg.mode != "classical_only":
        p = dict(rc.pairing)
        hidden = p.pop("must_include_hidden", True)
        p.setdefault("seed", rc.seed)
        if "total_pairs" not in p and "sampling_ratio" not in p:
            p["sampling_ratio"] = 0.30
        if hidden and "hidden_pair" in train.meta:
            p["must_include"] = (tuple(train.meta["hidden_pair"]),)
        try:
            plan = build_plan(PairingConfig(**p), _image_shape(train))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid pairing config: {exc}") from None
    return DQHFNN.build(mcfg, plan, Preprocessor.fit(train.features), rc.seed)


def _train_config(rc: RunConfig) -> TrainConfig:
    t = dict(rc.train)
    if t.get("optimizer") == "sgd":
        t["optimizer"] = "sgd_momentum"
    if "epochs" not in t:
        t["epochs"] = 60 if t.get("optimizer") == "adamw" else 80
    try:
        return TrainConfig(seed=rc.seed, **t)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train config: {exc}") from None


# ---- commands ----------------------------------------------------------

def cmd_train(args) -> int:
    rc = resolve_run(args)
    train, val, test = load_splits(load_manifest(rc.manifest))
    model = _build_model(rc, train)
    tcfg = _train_config(rc)
    verbose = not args.quiet

    def progress(row):
        if verbose:
            print(f"epoch {row['epoch']:3d}  loss {row['train_loss']:.4f}  train {row['train_acc']:.3f}  "
                  f"val {row['val_acc']:.3f}  lr {row['lr']:.2e}", file=sys.stderr)

    report = fit(model, (train.features, train.labels), tcfg, val=(val.features, val.labels),
                 test=(test.features, test.labels), callback=progress)
    os.makedirs(rc.out, exist_ok=True)
    _write(os.path.join(rc.out, "train_report.csv"), report.to_csv(comment_header("train", rc.seed)))
    _write(os.path.join(rc.out, "summary.json"), report.summary_json())
    save_checkpoint(model, os.path.join(rc.out, "checkpoint.txt"))
    if model.plan is not None:
        _write(os.path.join(rc.out, "pairs.csv"), model.plan.to_csv(comment_header("train", rc.seed)))
    print(json.dumps(report.summary(), sort_keys=True))
    return EXIT_OK


def _load_model(path: str) -> DQHFNN:
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataFormatError(f"checkpoint {path!r} not found") from None
    except (ValueError, KeyError) as exc:
        raise DataFormatError(f"cannot read checkpoint {path!r}: {exc}") from None


def _eval_split(args):
    rc = resolve_run(args)
    model = _load_model(args.checkpoint)
    train, val, test = load_splits(load_manifest(rc.manifest))
    split = {"train": train, "val": val, "test": test}[args.split]
    if split.features.shape[1] != model.config.n_features:
        raise DataFormatError(
            f"checkpoint expects {model.config.n_features} features, dataset has {split.features.shape[1]}")
    return rc, model, train, split


def cmd_eval(args) -> int:
    rc, model, _, split = _eval_split(args)
    metrics = evaluate(model, split.features, split.labels)
    metrics = {k: metrics[k] for k in sorted(metrics)}
    metrics.update(split=args.split, n=len(split), seed=rc.seed)
    text = json.dumps(metrics, sort_keys=True, indent=2) + "\n"
    if args.out:
        _write(args.out, text)
    print(text, end="")
    return EXIT_OK


def cmd_robustness(args) -> int:
    rc, model, train, split = _eval_split(args)
    value_range = train.meta.get("value_range", (float(train.features.min()), float(train.features.max())))
    shape = split.shape if len(split.shape) >= 2 else (1, split.shape[0])
    base = predict_proba_batched(model, split.features)
    lines = [comment_header("robustness", rc.seed), "perturbation,mean_divergence,n_samples"]
    for token in args.perturb.split(","):
        try:
            p = Perturbation.parse(token, seed=rc.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        moved = perturb_batch(split.features, p, value_range, shape)
        div = prediction_divergence(base, predict_proba_batched(model, moved))
        lines.append(f"{p.label},{float(np.mean(div)):.6e},{len(split)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(args.out, text)
    print(text, end="")
    return EXIT_OK


def _arch_list(text: str):
    try:
        return [registry_lookup(a) for a in text.split(",") if a.strip()]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_characterize(args) -> int:
    seed = 0 if args.seed is None else args.seed
    workers = args.workers or 1
    lines = [comment_header("characterize", seed), "arch,metric,value,n,seed"]
    table = ["arch  expressibility_kl  entangling_capability"]
    for arch in _arch_list(args.arch or ",".join(REGISTRY)):
        ex = expressibility(arch, args.pairs, args.bins, seed, args.pinned, workers)
        en = entangling_capability(arch, args.samples, seed, args.pinned, workers)
        lines += [ex.csv_row(), en.csv_row()]
        table.append(f"{arch.name:4s}  {ex.kl_value:17.3f}  {en.mean_q:21.3f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(args.out, text)
    print("\n".join(table))
    return EXIT_OK


def _noise_theta(args, arch):
    source = args.theta
    if source == "zeros":
        return np.zeros(arch.n_params)
    if source == "random":
        return init_quantum_params(arch, 1, 0 if args.seed is None else args.seed)[0]
    if source.startswith("checkpoint:"):
        model = _load_model(source.split(":", 1)[1])
        if model.arch.name != arch.name:
            raise ConfigError(f"checkpoint uses arch {model.arch.name}, not {arch.name}")
        return model.params["quantum.theta"][args.class_index]
    raise ConfigError(f"unknown theta source {source!r}; use zeros, random or checkpoint:PATH")


def cmd_noise(args) -> int:
    seed = 0 if args.seed is None else args.seed
    arch = _arch_list(args.arch or "C")[0]
    try:
        gammas = parse_gamma_grid(args.gammas)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    kinds = tuple(k.strip().upper() for k in args.channels.split(","))
    if any(k not in CHANNEL_KINDS for k in kinds):
        raise ConfigError(f"channels must be drawn from {CHANNEL_KINDS}")
    theta = _noise_theta(args, arch)
    report = fidelity_sweep(arch, theta, kinds, gammas, args.inputs, seed, args.input_map, args.workers or 1)
    text = report.to_csv(comment_header("noise", seed))
    if args.out:
        _write(args.out, text)
    print(report.table())
    return EXIT_OK


def _parse_shape(text: str):
    dims = tuple(int(d) for d in text.lower().split("x"))
    return dims[0] if len(dims) == 1 else dims


def cmd_pairs(args) -> int:
    seed = 0 if args.seed is None else args.seed
    try:
        shape = _parse_shape(args.shape)
        kw = dict(random_fraction=args.random_fraction, center_bias=not args.no_center_bias, seed=seed)
        if args.total is not None:
            kw["total_pairs"] = args.total
        else:
            kw["sampling_ratio"] = args.ratio
        if args.grid:
            kw["grid"] = _grid(args.grid)
        plan = build_plan(PairingConfig(**kw), shape)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    text = plan.to_csv(comment_header("pairs", seed))
    if args.out:
        _write(args.out, text)
    print(f"fixed {plan.n_fixed}, random {plan.n_random}, per channel {len(plan.pairs)}, "
          f"channels {plan.channels}")
    print(f"{plan.total_pairs} pairs, {plan.n_scalar_features} features")
    return EXIT_OK


def _toy_model(arch_name: str, mode: str, seed: int):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 4))
    y = np.array([0, 1, 0, 1, 1, 0])
    plan = build_plan(PairingConfig(total_pairs=3, random_fraction=1.0, seed=seed), (2, 2))
    cfg = ModelConfig(n_features=4, n_classes=2, arch=arch_name, mode=mode, hidden=5, fusion_dim=3, dropout=0.3)
    model = DQHFNN.build(cfg, plan, Preprocessor.fit(x), seed)
    if mode == "quantum_only":
        return model, x, y
    # small non-zero biases keep ReLU units away from their kink
    model.params["classical.0.b"] = rng.uniform(0.05, 0.2, size=5)
    return model, x, y


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    lines = [comment_header("gradcheck", seed), "arch,mode,max_deviation,passed"]
    ok = True
    for arch in _arch_list(args.arch or "A,B,C,D,E,G"):
        if arch.excluded_from_training:
            continue
        model, x, y = _toy_model(arch.name, args.mode, seed)
        passed, dev = gradient_check(model, x, y, tolerance=args.tolerance)
        ok &= passed
        lines.append(f"{arch.name},{args.mode},{dev:.3e},{int(passed)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(args.out, text)
    print(text, end="")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_dataset(args) -> int:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    if args.kind == "digits":
        try:
            ds = write_digits_csv(os.path.join(out, "digits.csv"))
        except ImportError:
            raise ConfigError("the digits export needs scikit-learn (pip install .[digits])") from None
        write_manifest(os.path.join(out, "manifest.json"), "digits8x8", "csv", {"data": "digits.csv"},
                       10, ds.shape, seed=seed)
    else:
        write_manifest(os.path.join(out, "manifest.json"), "pair_parity", "pair_parity", {}, 2,
                       (args.side, args.side), seed=seed,
                       options={"n_samples": args.samples, "side": args.side, "seed": seed})
    print(os.path.join(out, "manifest.json"))
    return EXIT_OK


# ---- argument parsing --------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI run config")
    p.add_argument("--arch", help="architecture name(s), A-G")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--workers", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dqhfnn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"dqhfnn {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "evaluate a checkpoint"),
                              ("robustness", cmd_robustness, "prediction KL under perturbations")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--manifest")
        p.add_argument("--split", choices=("train", "val", "test"), default="test")
        if name == "robustness":
            p.add_argument("--perturb", default="brightness:0.1,contrast:1.2,local_shuffle:3,global_shuffle")
        p.set_defaults(func=func)

    p = sub.add_parser("characterize", help="expressibility and entangling capability")
    _common(p)
    p.add_argument("--pairs", type=int, default=DEFAULT_PAIRS)
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--pinned", action="store_true", help="pin inputs to 0 instead of sampling them")
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("noise", help="average fidelity under Kraus noise")
    _common(p)
    p.add_argument("--theta", default="zeros", help="zeros | random | checkpoint:PATH")
    p.add_argument("--class-index", type=int, default=0)
    p.add_argument("--gammas", default="0,0.01,0.05,0.1")
    p.add_argument("--channels", default=",".join(CHANNEL_KINDS))
    p.add_argument("--inputs", type=int, default=200)
    p.add_argument("--input-map", choices=("raw", "normalize"), default="raw")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("pairs", help="build and export a pairing plan")
    _common(p)
    p.add_argument("--shape", required=True, help="e.g. 32x32x3 or 200")
    p.add_argument("--ratio", type=float, default=0.30)
    p.add_argument("--total", type=int)
    p.add_argument("--random-fraction", type=float, default=1.0)
    p.add_argument("--grid", help="rowsxcols")
    p.add_argument("--no-center-bias", action="store_true")
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("gradcheck", help="finite-difference check on toy models")
    _common(p)
    p.add_argument("--mode", choices=("hybrid", "quantum_only", "classical_only"), default="hybrid")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dataset", help="write a dataset manifest (digits CSV or pair parity)")
    _common(p)
    p.add_argument("--kind", choices=("digits", "parity"), required=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--side", type=int, default=8)
    p.set_defaults(func=cmd_dataset)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
