"""The two-branch hybrid model, its preprocessing and checkpoint format.

Checkpoint text format (one record per line, order preserved)::

    # dqhfnn checkpoint 1
    meta <json object>
    tensor <name> <d0,d1,...> <row-major values, %.17g, space separated>

A scalar-free 0-d tensor is written with shape ``-``. Values round-trip
exactly because ``%.17g`` is lossless for IEEE doubles.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .circuits import CircuitArchitecture, registry_lookup
from .fuzzy import DEFAULT_CLAMP_EPS, QuantumFuzzyLayer
from .nn import (
    DenseLayer,
    DropoutSpec,
    dense_backward,
    dense_forward_cached,
    dropout_mask,
    glorot_uniform,
    one_hot,
    softmax,
    cross_entropy,
)
from .pairing import PairingPlan, extract_pairs

MODES = ("hybrid", "quantum_only", "classical_only")
CHECKPOINT_MAGIC = "# dqhfnn checkpoint 1"


def init_quantum_params(arch: CircuitArchitecture, n_classes: int, seed: int) -> np.ndarray:
    """``(C, P)`` angles drawn from U(0, 2*pi)."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 2 * np.pi, size=(n_classes, arch.n_params))


@dataclass
class Preprocessor:
    """Train-split standardization plus the per-feature angle ranges.

    Angles use the min/max of the *standardized* training features; a
    constant feature gets the range ``(v, v + 1)`` so it maps to angle 0.
    """
    mean: np.ndarray
    std: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, features) -> "Preprocessor":
        x = np.asarray(features, dtype=float)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        z = (x - mean) / std
        lo = z.min(axis=0)
        hi = z.max(axis=0)
        hi = np.where(hi - lo > 0, hi, lo + 1.0)
        return cls(mean, std, lo, hi)

    def standardize(self, features) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.mean) / self.std

    def angles(self, standardized) -> np.ndarray:
        z = np.asarray(standardized, dtype=float)
        return np.clip((z - self.lo) / (self.hi - self.lo), 0.0, 1.0) * np.pi


@dataclass
class ModelConfig:
    n_features: int
    n_classes: int
    arch: str = "C"
    mode: str = "hybrid"
    hidden: int = 128
    fusion_dim: int = 64
    dropout: float = 0.3
    clamp_eps: float = DEFAULT_CLAMP_EPS
    classifier_hidden: tuple = ()
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        self.classifier_hidden = tuple(int(h) for h in self.classifier_hidden)
        DropoutSpec(self.dropout)


@dataclass
class ForwardCache:
    xs: np.ndarray
    pairs: Optional[np.ndarray] = None
    h_fuzzy: Optional[np.ndarray] = None
    jac: Optional[np.ndarray] = None
    classical: list = field(default_factory=list)
    mask: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    head: list = field(default_factory=list)
    logits: Optional[np.ndarray] = None


class DQHFNN:
    """Classical dense branch + quantum fuzzy branch, fused by addition."""

    def __init__(self, config: ModelConfig, plan: Optional[PairingPlan], prep: Preprocessor,
                 params: dict):
        self.config = config
        self.arch = registry_lookup(config.arch)
        if self.arch.excluded_from_training:
            raise ValueError(f"architecture {self.arch.name} is not available for training")
        if config.mode != "classical_only" and plan is None:
            raise ValueError("a pairing plan is required unless mode is classical_only")
        if plan is not None and plan.n_features != config.n_features:
            raise ValueError(f"plan covers {plan.n_features} features, model has {config.n_features}")
        self.plan = plan
        self.prep = prep
        self.params = dict(params)

    # ---- construction -------------------------------------------------
    @classmethod
    def build(cls, config: ModelConfig, plan: Optional[PairingPlan], prep: Preprocessor,
              seed: int) -> "DQHFNN":
        arch = registry_lookup(config.arch)
        rng = np.random.default_rng([seed, 1])
        params: dict[str, np.ndarray] = {}
        sizes = [config.n_features, config.hidden, config.fusion_dim]
        for k in range(2):
            params[f"classical.{k}.W"] = glorot_uniform(rng, sizes[k], sizes[k + 1])
            params[f"classical.{k}.b"] = np.zeros(sizes[k + 1])
        if config.mode == "quantum_only":
            for name in list(params):
                params[name] = np.zeros_like(params[name])
        params["fusion.W"] = glorot_uniform(rng, config.n_classes, config.fusion_dim)
        params["fusion.b"] = np.zeros(config.fusion_dim)
        head = [config.fusion_dim, *config.classifier_hidden, config.n_classes]
        for k in range(len(head) - 1):
            params[f"classifier.{k}.W"] = glorot_uniform(rng, head[k], head[k + 1])
            params[f"classifier.{k}.b"] = np.zeros(head[k + 1])
        params["quantum.theta"] = init_quantum_params(arch, config.n_classes, seed)
        return cls(config, plan, prep, params)

    # ---- parameter bookkeeping ----------------------------------------
    def trainable_names(self) -> list[str]:
        mode = self.config.mode
        names = []
        for name in self.params:
            if mode == "quantum_only" and name.startswith("classical."):
                continue
            if mode == "classical_only" and (name.startswith("fusion.") or name.startswith("quantum.")):
                continue
            names.append(name)
        return names

    def _layers(self, prefix: str, n_layers: int, last_activation: str) -> list[DenseLayer]:
        out = []
        for k in range(n_layers):
            act = last_activation if k == n_layers - 1 else "relu"
            out.append(DenseLayer(self.params[f"{prefix}.{k}.W"], self.params[f"{prefix}.{k}.b"], act))
        return out

    def fuzzy_layer(self) -> QuantumFuzzyLayer:
        return QuantumFuzzyLayer(self.arch, self.params["quantum.theta"], self.config.clamp_eps,
                                 self.config.workers)

    def pairs(self, features) -> np.ndarray:
        xs = self.prep.standardize(features)
        return extract_pairs(self.prep.angles(xs), self.plan)

    # ---- forward / backward -------------------------------------------
    def _forward(self, features, train: bool, rng, need_jac: bool) -> ForwardCache:
        cfg = self.config
        x = np.atleast_2d(np.asarray(features, dtype=float))
        if x.shape[1] != cfg.n_features:
            raise ValueError(f"model expects {cfg.n_features} features, got {x.shape[1]}")
        cache = ForwardCache(xs=self.prep.standardize(x))
        z = np.zeros((x.shape[0], cfg.fusion_dim))
        if cfg.mode != "quantum_only":
            a = cache.xs
            layers = self._layers("classical", 2, "none")
            out, pre = dense_forward_cached(layers[0], a)
            cache.classical.append((a, pre))
            cache.mask = dropout_mask(out.shape, DropoutSpec(cfg.dropout, train), rng)
            a = out if cache.mask is None else out * cache.mask
            out, pre = dense_forward_cached(layers[1], a)
            cache.classical.append((a, pre))
            z = z + out
        if cfg.mode != "classical_only":
            cache.pairs = extract_pairs(self.prep.angles(cache.xs), self.plan)
            layer = self.fuzzy_layer()
            if need_jac:
                cache.h_fuzzy, cache.jac = layer.forward_backward(cache.pairs)
            else:
                cache.h_fuzzy = layer.forward(cache.pairs)
            z = z + cache.h_fuzzy @ self.params["fusion.W"].T + self.params["fusion.b"]
        cache.z = z
        a = z
        head = self._layers("classifier", len(cfg.classifier_hidden) + 1, "none")
        for layer in head:
            out, pre = dense_forward_cached(layer, a)
            cache.head.append((a, pre))
            a = out
        cache.logits = a
        return cache

    def logits(self, features) -> np.ndarray:
        return self._forward(features, False, None, False).logits

    def predict_proba(self, features) -> np.ndarray:
        return softmax(self.logits(features))

    def predict(self, features) -> np.ndarray:
        return self.logits(features).argmax(axis=1)

    def loss(self, features, labels, train: bool = False, rng=None) -> float:
        cache = self._forward(features, train, rng, False)
        return cross_entropy(softmax(cache.logits), labels)

    def loss_and_grads(self, features, labels, train: bool = True, rng=None):
        """Mean cross-entropy and gradients of every trainable tensor.

        Returns ``(loss, grads, probs)``. The same ``rng`` seed reproduces
        the same dropout mask, which the finite-difference checks rely on.
        """
        cfg = self.config
        cache = self._forward(features, train, rng, cfg.mode != "classical_only")
        probs = softmax(cache.logits)
        labels = np.asarray(labels, dtype=int)
        loss = cross_entropy(probs, labels)
        m = probs.shape[0]
        grads: dict[str, np.ndarray] = {}

        grad = (probs - one_hot(labels, cfg.n_classes)) / m
        head = self._layers("classifier", len(cfg.classifier_hidden) + 1, "none")
        for k in reversed(range(len(head))):
            a, pre = cache.head[k]
            grad, dW, db = dense_backward(head[k], a, pre, grad)
            grads[f"classifier.{k}.W"] = dW
            grads[f"classifier.{k}.b"] = db
        dz = grad

        if cfg.mode != "classical_only":
            grads["fusion.W"] = dz.T @ cache.h_fuzzy
            grads["fusion.b"] = dz.sum(axis=0)
            dh = dz @ self.params["fusion.W"]  # (S, C)
            grads["quantum.theta"] = np.einsum("sc,scp->cp", dh, cache.jac)
        if cfg.mode != "quantum_only":
            layers = self._layers("classical", 2, "none")
            a, pre = cache.classical[1]
            grad, dW, db = dense_backward(layers[1], a, pre, dz)
            grads["classical.1.W"], grads["classical.1.b"] = dW, db
            if cache.mask is not None:
                grad = grad * cache.mask
            a, pre = cache.classical[0]
            _, dW, db = dense_backward(layers[0], a, pre, grad)
            grads["classical.0.W"], grads["classical.0.b"] = dW, db
        return loss, {name: grads[name] for name in self.trainable_names()}, probs

    # ---- serialization -------------------------------------------------
    def state_tensors(self) -> dict[str, np.ndarray]:
        out = dict(self.params)
        out["prep.mean"] = self.prep.mean
        out["prep.std"] = self.prep.std
        out["prep.lo"] = self.prep.lo
        out["prep.hi"] = self.prep.hi
        if self.plan is not None:
            out["plan.pairs"] = self.plan.pairs
        return out

    def meta(self) -> dict:
        meta = {"model": asdict(self.config)}
        meta["model"]["classifier_hidden"] = list(self.config.classifier_hidden)
        if self.plan is not None:
            p = self.plan
            meta["plan"] = {"mode": p.mode, "shape": list(p.shape), "grid": list(p.grid),
                            "seed": p.seed, "origins": "".join("f" if o == "fixed" else "r" for o in p.origins)}
        return meta


def _fmt_tensor(name: str, arr: np.ndarray) -> str:
    arr = np.asarray(arr)
    shape = ",".join(str(d) for d in arr.shape) if arr.ndim else "-"
    values = " ".join("%.17g" % v for v in arr.ravel().tolist())
    return f"tensor {name} {shape} {values}".rstrip()


def dumps_checkpoint(model: DQHFNN) -> str:
    lines = [CHECKPOINT_MAGIC, "meta " + json.dumps(model.meta(), sort_keys=True)]
    lines += [_fmt_tensor(name, arr) for name, arr in model.state_tensors().items()]
    return "\n".join(lines) + "\n"


def save_checkpoint(model: DQHFNN, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dumps_checkpoint(model))


def parse_tensors(text: str):
    lines = text.splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_MAGIC:
        raise ValueError("not a dqhfnn checkpoint")
    meta: dict = {}
    tensors: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            meta = json.loads(rest)
        elif kind == "tensor":
            parts = rest.split(" ")
            name, shape_txt, values = parts[0], parts[1], parts[2:]
            shape = () if shape_txt == "-" else tuple(int(d) for d in shape_txt.split(","))
            arr = np.array([float(v) for v in values], dtype=float)
            if arr.size != int(np.prod(shape)):
                raise ValueError(f"tensor {name}: {arr.size} values for shape {shape}")
            tensors[name] = arr.reshape(shape)
        else:
            raise ValueError(f"unknown checkpoint record {kind!r}")
    return meta, tensors


def loads_checkpoint(text: str) -> DQHFNN:
    meta, tensors = parse_tensors(text)
    cfg = dict(meta["model"])
    cfg["classifier_hidden"] = tuple(cfg.get("classifier_hidden", ()))
    config = ModelConfig(**cfg)
    prep = Preprocessor(tensors.pop("prep.mean"), tensors.pop("prep.std"),
                        tensors.pop("prep.lo"), tensors.pop("prep.hi"))
    plan = None
    if "plan" in meta:
        pm = meta["plan"]
        pairs = tensors.pop("plan.pairs").astype(int).reshape(-1, 2)
        origins = tuple("fixed" if c == "f" else "random" for c in pm["origins"])
        plan = PairingPlan(pairs, origins, pm["mode"], tuple(pm["shape"]), tuple(pm["grid"]), pm["seed"],
                           n_fixed=origins.count("fixed"), n_random=origins.count("random"))
    return DQHFNN(config, plan, prep, tensors)


def load_checkpoint(path) -> DQHFNN:
    with open(path, encoding="ascii") as fh:
        return loads_checkpoint(fh.read())
