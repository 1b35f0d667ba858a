"""Optimizers, learning-rate schedules and the training loop."""
from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .model import DQHFNN, init_quantum_params
from .nn import cross_entropy, macro_metrics

__all__ = [
    "NumericError",
    "OptimizerState",
    "Schedule",
    "TrainConfig",
    "TrainReport",
    "init_quantum_params",
    "sgd_step",
    "adamw_step",
    "lr_at",
    "fit",
    "evaluate",
    "gradient_check",
    "kfold_split",
]

QUANTUM_PREFIX = "quantum."


class NumericError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class OptimizerState:
    kind: str = "sgd_momentum"
    lr: float = 1e-2
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adamw"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def _check_shapes(params: dict, grads: dict):
    for name, g in grads.items():
        if name not in params:
            raise ValueError(f"gradient for unknown tensor {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"shape mismatch for {name}: {np.shape(g)} vs {np.shape(params[name])}")


def sgd_step(params: dict, grads: dict, state: OptimizerState, lr: Optional[float] = None) -> dict:
    """``v <- momentum*v + g``; ``p <- p - lr*v``. Untouched names pass through."""
    _check_shapes(params, grads)
    lr = state.lr if lr is None else lr
    out = dict(params)
    for name, g in grads.items():
        v = state.buffers.get(name)
        v = np.asarray(g, dtype=float).copy() if v is None else state.momentum * v + g
        state.buffers[name] = v
        out[name] = params[name] - lr * v
    state.step += 1
    return out


def adamw_step(params: dict, grads: dict, state: OptimizerState, lr: Optional[float] = None) -> dict:
    """Bias-corrected Adam with decoupled weight decay.

    Decay is skipped for quantum angles: shrinking a 2*pi-periodic angle
    toward zero does not regularize anything.
    """
    _check_shapes(params, grads)
    lr = state.lr if lr is None else lr
    b1, b2 = state.betas
    state.step += 1
    t = state.step
    out = dict(params)
    for name, g in grads.items():
        g = np.asarray(g, dtype=float)
        m, v = state.buffers.get(name, (np.zeros_like(g), np.zeros_like(g)))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.buffers[name] = (m, v)
        p = params[name]
        if state.weight_decay and not name.startswith(QUANTUM_PREFIX):
            p = p - lr * state.weight_decay * p
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


@dataclass(frozen=True)
class Schedule:
    kind: str = "multistep"
    base_lr: float = 1e-2
    milestones: tuple = (56, 78)
    factor: float = 0.1
    warmup_epochs: float = 3
    total_epochs: float = 60

    def __post_init__(self):
        if self.kind not in ("multistep", "warmup_cosine", "constant"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        ms = tuple(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("milestones must be strictly increasing")
        if self.kind == "warmup_cosine" and not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("warmup_epochs must be smaller than total_epochs")


def lr_at(schedule: Schedule, epoch: float) -> float:
    """Learning rate for 1-based ``epoch`` (fractional epochs allowed).

    Multistep decays once for every milestone ``m`` with ``epoch > m``, so
    epochs ``1..56`` run at the base rate for milestone 56.
    """
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    s = schedule
    if s.kind == "constant":
        return s.base_lr
    if s.kind == "multistep":
        passed = sum(1 for m in s.milestones if epoch > m)
        return s.base_lr * s.factor ** passed
    if s.warmup_epochs > 0 and epoch <= s.warmup_epochs:
        return s.base_lr * epoch / s.warmup_epochs
    progress = min(1.0, (epoch - s.warmup_epochs) / (s.total_epochs - s.warmup_epochs))
    return s.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainConfig:
    optimizer: str = "sgd_momentum"
    lr: float = 1e-2
    schedule: str = "multistep"
    milestones: tuple = (56, 78)
    factor: float = 0.1
    warmup_epochs: float = 3
    epochs: int = 80
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        self.milestones = tuple(int(m) for m in self.milestones)
        self.make_schedule()
        self.make_optimizer()

    def make_schedule(self) -> Schedule:
        return Schedule(self.schedule, self.lr, self.milestones, self.factor, self.warmup_epochs,
                        max(self.epochs, self.warmup_epochs + 1))

    def make_optimizer(self) -> OptimizerState:
        wd = self.weight_decay
        if wd is None:
            wd = 1e-2 if self.optimizer == "adamw" else 0.0
        return OptimizerState(self.optimizer, self.lr, self.momentum, weight_decay=wd)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


REPORT_COLUMNS = ("epoch", "train_loss", "train_acc", "val_acc", "lr", "grad_norm_quantum",
                  "grad_norm_classical")


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)
    test_metrics: dict = field(default_factory=dict)
    seed: int = 0
    config_hash: str = ""

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, header: Optional[str] = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(header.rstrip("\n") + "\n")
        buf.write(",".join(REPORT_COLUMNS) + "\n")
        for r in self.rows:
            buf.write(f"{r['epoch']},{r['train_loss']:.6f},{r['train_acc']:.6f},{r['val_acc']:.6f},"
                      f"{r['lr']:.6g},{r['grad_norm_quantum']:.6e},{r['grad_norm_classical']:.6e}\n")
        return buf.getvalue()

    def summary(self) -> dict:
        out = {k: self.test_metrics.get(k) for k in ("accuracy", "macro_precision", "macro_recall", "macro_f1")}
        out["seed"] = self.seed
        out["config_hash"] = self.config_hash
        return out

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2) + "\n"


def _norm(grads: dict, quantum: bool) -> float:
    total = 0.0
    for name, g in grads.items():
        if name.startswith(QUANTUM_PREFIX) == quantum:
            total += float(np.sum(np.square(g)))
    return math.sqrt(total)


def predict_proba_batched(model: DQHFNN, features, batch_size: int = 512) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    parts = [model.predict_proba(features[k:k + batch_size]) for k in range(0, len(features), batch_size)]
    return np.concatenate(parts) if parts else np.zeros((0, model.config.n_classes))


def evaluate(model: DQHFNN, features, labels, batch_size: int = 512) -> dict:
    pred = predict_proba_batched(model, features, batch_size).argmax(axis=1)
    return macro_metrics(pred, labels, model.config.n_classes)


def fit(model: DQHFNN, train, config: TrainConfig, val=None, test=None,
        callback: Optional[Callable[[dict], None]] = None) -> TrainReport:
    """Mini-batch training; ``train``/``val``/``test`` are ``(features, labels)``.

    Shuffling and dropout draw from streams keyed by ``(seed, epoch)``, and
    batch gradients are accumulated in sample order, so a run is
    reproducible bit for bit. ``train_loss``/``train_acc`` come from a
    dropout-free pass over the training split at the end of each epoch, so
    they reflect the weights rather than mini-batch noise.
    """
    x_train, y_train = (np.asarray(a) for a in train)
    if len(x_train) != len(y_train):
        raise ValueError("features and labels differ in length")
    schedule = config.make_schedule()
    opt = config.make_optimizer()
    report = TrainReport(seed=config.seed, config_hash=config.digest())
    n = len(x_train)
    names = model.trainable_names()
    for epoch in range(1, config.epochs + 1):
        lr = lr_at(schedule, epoch)
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(n)
        qnorms, cnorms = [], []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads, _ = model.loss_and_grads(x_train[idx], y_train[idx], train=True, rng=rng)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            qnorms.append(_norm(grads, True))
            cnorms.append(_norm(grads, False))
            params = {k: model.params[k] for k in names}
            step = sgd_step if opt.kind == "sgd_momentum" else adamw_step
            model.params.update(step(params, grads, opt, lr))
        probs = predict_proba_batched(model, x_train)
        train_loss = cross_entropy(probs, y_train)
        if not math.isfinite(train_loss):
            raise NumericError(f"non-finite training loss after epoch {epoch}")
        row = {
            "epoch": epoch,
            "train_loss": train_loss,
            "train_acc": float(np.mean(probs.argmax(axis=1) == y_train)),
            "val_acc": evaluate(model, *val)["accuracy"] if val is not None else float("nan"),
            "lr": lr,
            "grad_norm_quantum": float(np.mean(qnorms)),
            "grad_norm_classical": float(np.mean(cnorms)),
        }
        report.rows.append(row)
        if callback is not None:
            callback(row)
    if test is not None:
        report.test_metrics = evaluate(model, *test)
    return report


def gradient_check(model: DQHFNN, features, labels, tolerance: float = 1e-5, step: float = 1e-4,
                   dropout_seed: int = 0, grad_hook: Optional[Callable[[dict], dict]] = None,
                   max_entries: Optional[int] = None):
    """Compare analytic gradients with central differences.

    Every trainable entry is perturbed (or the first ``max_entries`` of each
    tensor). The dropout mask is pinned by reusing ``dropout_seed``. The
    deviation is ``|a - n| / max(1, |n|)``. Returns ``(passed, max_dev)``.
    """
    _, grads, _ = model.loss_and_grads(features, labels, train=True, rng=dropout_seed)
    if grad_hook is not None:
        grads = grad_hook(grads)
    worst = 0.0
    for name, g in grads.items():
        p = model.params[name]
        flat = p.reshape(-1)
        count = flat.size if max_entries is None else min(flat.size, max_entries)
        for k in range(count):
            orig = flat[k]
            flat[k] = orig + step
            up = model.loss(features, labels, train=True, rng=dropout_seed)
            flat[k] = orig - step
            down = model.loss(features, labels, train=True, rng=dropout_seed)
            flat[k] = orig
            numeric = (up - down) / (2 * step)
            dev = abs(g.reshape(-1)[k] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, dev)
    return worst < tolerance, worst


def kfold_split(n: int, k: int, seed: int = 0):
    """``k`` shuffled ``(train_idx, val_idx)`` partitions with sizes within 1."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, val in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train_idx), np.sort(val)))
    return out
