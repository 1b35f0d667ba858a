"""Dense layers, dropout, fusion, softmax/cross-entropy and metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

PROB_CLAMP = 1e-12
ACTIVATIONS = ("relu", "none")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """``(fan_out, fan_in)`` matrix drawn from U(+-sqrt(6 / (fan_in + fan_out)))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def relu(x):
    return np.maximum(x, 0.0)


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "none"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent shapes W{self.W.shape} b{self.b.shape}")

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, activation: str = "none") -> "DenseLayer":
        return cls(glorot_uniform(rng, n_in, n_out), np.zeros(n_out), activation)

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]


def dense_forward(layer: DenseLayer, x) -> np.ndarray:
    """``sigma(W x + b)`` for one vector or a ``(S, in)`` batch."""
    return dense_forward_cached(layer, x)[0]


def dense_forward_cached(layer: DenseLayer, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.n_in:
        raise ValueError(f"layer expects {layer.n_in} inputs, got {x.shape[-1]}")
    pre = x @ layer.W.T + layer.b
    out = relu(pre) if layer.activation == "relu" else pre
    return out, pre


def dense_backward(layer: DenseLayer, x, pre, grad_out):
    """Returns ``(dx, dW, db)`` for batched ``x`` of shape ``(S, in)``."""
    grad = np.asarray(grad_out, dtype=float)
    if layer.activation == "relu":
        grad = grad * (pre > 0)
    x2 = np.atleast_2d(x)
    g2 = np.atleast_2d(grad)
    dW = g2.T @ x2
    db = g2.sum(axis=0)
    dx = grad @ layer.W
    return dx, dW, db


@dataclass(frozen=True)
class DropoutSpec:
    rate: float = 0.0
    train_mode: bool = True

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.rate}")


def dropout_mask(shape, spec: DropoutSpec, rng: Union[int, np.random.Generator, None]) -> Optional[np.ndarray]:
    """Scaled keep-mask (survivors carry ``1/(1-rate)``), or None for identity."""
    if not spec.train_mode or spec.rate == 0.0:
        return None
    rng = np.random.default_rng(rng)
    keep = rng.random(shape) >= spec.rate
    return keep / (1.0 - spec.rate)


def dropout(x, spec: DropoutSpec, seed=None) -> np.ndarray:
    """Inverted dropout in training mode; identity otherwise."""
    x = np.asarray(x, dtype=float)
    mask = dropout_mask(x.shape, spec, seed)
    return x if mask is None else x * mask


@dataclass
class FusionLayer:
    W_f: np.ndarray
    b_f: np.ndarray

    def __post_init__(self):
        self.W_f = np.asarray(self.W_f, dtype=float)
        self.b_f = np.asarray(self.b_f, dtype=float)
        if self.W_f.ndim != 2 or self.b_f.shape != (self.W_f.shape[0],):
            raise ValueError(f"inconsistent shapes W_f{self.W_f.shape} b_f{self.b_f.shape}")


def project(h_fuzzy, fusion: FusionLayer) -> np.ndarray:
    h_fuzzy = np.asarray(h_fuzzy, dtype=float)
    if h_fuzzy.shape[-1] != fusion.W_f.shape[1]:
        raise ValueError(f"fusion expects {fusion.W_f.shape[1]} fuzzy features, got {h_fuzzy.shape[-1]}")
    return h_fuzzy @ fusion.W_f.T + fusion.b_f


def fuse(h_classical, h_fuzzy, fusion: FusionLayer) -> np.ndarray:
    """Element-wise sum of the classical features and the projected fuzzy ones."""
    h_classical = np.asarray(h_classical, dtype=float)
    proj = project(h_fuzzy, fusion)
    if h_classical.shape[-1] != proj.shape[-1]:
        raise ValueError(f"classical dim {h_classical.shape[-1]} != fusion dim {proj.shape[-1]}")
    return h_classical + proj


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _label_indices(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape[1] != n_classes:
            raise ValueError("one-hot labels do not match the class count")
        return labels.argmax(axis=1)
    return labels.astype(int)


def cross_entropy(probs, labels) -> float:
    """Mean negative log-probability of the true class (clamped at 1e-12)."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    idx = _label_indices(labels, probs.shape[1]).reshape(-1)
    if idx.shape[0] != probs.shape[0]:
        raise ValueError(f"{probs.shape[0]} predictions but {idx.shape[0]} labels")
    picked = probs[np.arange(len(idx)), idx]
    return float(-np.mean(np.log(np.maximum(picked, PROB_CLAMP))))


def one_hot(labels, n_classes: int) -> np.ndarray:
    idx = np.asarray(labels, dtype=int)
    out = np.zeros((idx.size, n_classes))
    out[np.arange(idx.size), idx] = 1.0
    return out


def confusion_matrix(pred, true, n_classes: int) -> np.ndarray:
    """``cm[t, p]`` counts samples of true class ``t`` predicted as ``p``."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=int), np.asarray(pred, dtype=int)), 1)
    return cm


def macro_metrics(pred, true, n_classes: int) -> dict:
    pred = np.asarray(pred, dtype=int)
    true = np.asarray(true, dtype=int)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("predictions and labels must have the same non-zero length")
    cm = confusion_matrix(pred, true, n_classes)
    tp = np.diag(cm).astype(float)
    pred_count = cm.sum(axis=0)
    true_count = cm.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_count > 0, tp / np.maximum(pred_count, 1), 0.0)
        recall = np.where(true_count > 0, tp / np.maximum(true_count, 1), 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    return {
        "accuracy": float(tp.sum() / pred.size),
        "macro_precision": float(precision.mean()),
        "macro_recall": float(recall.mean()),
        "macro_f1": float(f1.mean()),
    }


def prediction_divergence(p, q, eps: float = PROB_CLAMP):
    """KL(p || q) along the last axis after additive smoothing."""
    p = np.asarray(p, dtype=float) + eps
    q = np.asarray(q, dtype=float) + eps
    p = p / p.sum(axis=-1, keepdims=True)
    q = q / q.sum(axis=-1, keepdims=True)
    kl = np.maximum(np.sum(p * np.log(p / q), axis=-1), 0.0)
    return kl if kl.ndim else float(kl)
