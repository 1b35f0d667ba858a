"""Dataset containers, IDX/CSV loaders, the pair-parity task and perturbations."""
from __future__ import annotations

import csv
import gzip
import json
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
PERTURBATIONS = ("brightness", "contrast", "local_shuffle", "global_shuffle")


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Stats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def of(cls, features) -> "Stats":
        x = np.asarray(features, dtype=float)
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std > 0, std, 1.0))


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    shape: tuple
    split: str = "all"
    stats: Optional[Stats] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=int)
        if f.ndim != 2 or len(f) != len(y):
            raise DataFormatError(f"features {f.shape} and labels {y.shape} disagree")
        if not np.all(np.isfinite(f)):
            raise DataFormatError("features must be finite")
        if len(y) and (y.min() < 0 or y.max() >= self.n_classes):
            raise DataFormatError(f"labels must lie in [0, {self.n_classes})")
        if int(np.prod(self.shape)) != f.shape[1]:
            raise DataFormatError(f"shape {self.shape} does not cover {f.shape[1]} features")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx, split: Optional[str] = None) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return replace(self, features=self.features[idx], labels=self.labels[idx],
                       split=split or self.split)

    @property
    def value_range(self) -> tuple[float, float]:
        if "value_range" in self.meta:
            return tuple(self.meta["value_range"])
        return float(self.features.min()), float(self.features.max())


# ---- IDX ---------------------------------------------------------------

def _open(path, mode="rb"):
    return gzip.open(path, mode) if str(path).endswith(".gz") else open(path, mode)


def _read_idx(path, magic: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: file too short for an IDX header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise DataFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise DataFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    size = int(np.prod(dims))
    if len(raw) - head < size:
        raise DataFormatError(f"{path}: truncated payload ({len(raw) - head} of {size} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=head).reshape(dims)


def read_idx_bytes(path, magic: int) -> np.ndarray:
    """Raw unsigned-byte payload with its IDX dimensions."""
    return _read_idx(path, magic)


def write_idx(path, array, magic: Optional[int] = None) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError("IDX payload must be uint8")
    if magic is None:
        magic = 0x00000800 | arr.ndim
    if magic & 0xFF != arr.ndim:
        raise ValueError("magic dimension count does not match the array")
    with _open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_idx(images_path, labels_path, n_classes: Optional[int] = None) -> Dataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.reshape(images.shape[0], -1).astype(float) / 255.0
    y = labels.astype(int)
    c = int(n_classes if n_classes is not None else (y.max() + 1 if len(y) else 2))
    return Dataset(features, y, max(c, 2), images.shape[1:], meta={"value_range": (0.0, 1.0)})


# ---- CSV ---------------------------------------------------------------

def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, label_column=-1, n_classes: Optional[int] = None, shape=None) -> Dataset:
    """Numeric table with one integer label column.

    A first row containing any non-numeric cell is taken as a header;
    ``label_column`` may then also be a column name.
    """
    with _open(path, "rt") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header, rows = rows[0], rows[1:]
    if not rows:
        raise DataFormatError(f"{path}: header but no data rows")
    width = len(rows[0])
    for n, r in enumerate(rows):
        if len(r) != width:
            raise DataFormatError(f"{path}: ragged row {n + 1} ({len(r)} cells, expected {width})")
    if isinstance(label_column, str):
        if header is None or label_column not in header:
            raise DataFormatError(f"{path}: no column named {label_column!r}")
        label_column = header.index(label_column)
    col = label_column % width
    try:
        table = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric cell ({exc})") from None
    labels = table[:, col]
    if np.any(labels != np.round(labels)):
        raise DataFormatError(f"{path}: labels must be integers")
    features = np.delete(table, col, axis=1)
    y = labels.astype(int)
    c = int(n_classes if n_classes is not None else max(int(y.max()) + 1, 2))
    return Dataset(features, y, c, tuple(shape) if shape else (features.shape[1],))


def write_csv(path, dataset: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{k}" for k in range(dataset.features.shape[1])] + ["label"])
        for x, y in zip(dataset.features, dataset.labels):
            w.writerow(["%.17g" % v for v in x] + [int(y)])


# ---- normalization and splits -----------------------------------------

def standardize(dataset: Dataset, stats: Optional[Stats] = None) -> Dataset:
    """``(x - mean) / std`` with train statistics (computed here if absent)."""
    stats = stats or Stats.of(dataset.features)
    z = (dataset.features - stats.mean) / stats.std
    return replace(dataset, features=z, stats=stats)


def split_dataset(dataset: Dataset, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Shuffled train/val/test subsets; sizes floor the leading fractions."""
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise ValueError("split fractions must be three values summing to 1")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(dataset.subset(np.sort(p), s) for p, s in zip(parts, ("train", "val", "test")))


# ---- synthetic pair parity --------------------------------------------

def synth_pair_parity(n_samples: int, image_side: int = 8, seed: int = 0, low: float = 0.0,
                      high: float = 1.0) -> Dataset:
    """Binary images whose label is the XOR of one hidden pixel pair.

    Every other pixel stays at ``low``. The four hidden-bit patterns are
    drawn in equal numbers (up to ``n % 4`` extra) and then shuffled, so the
    classes are balanced by construction. ``meta["hidden_pair"]`` holds the
    two flat indices for ``PairingConfig.must_include``.
    """
    if image_side < 2:
        raise ValueError("image_side must be >= 2")
    rng = np.random.default_rng(seed)
    n_pix = image_side * image_side
    i, j = (int(v) for v in rng.choice(n_pix, size=2, replace=False))
    patterns = np.array([(0, 0), (0, 1), (1, 0), (1, 1)])
    picks = np.concatenate([np.repeat(np.arange(4), n_samples // 4),
                            rng.choice(4, size=n_samples % 4, replace=False)])
    bits = patterns[rng.permutation(picks)]
    features = np.full((n_samples, n_pix), low, dtype=float)
    features[:, i] = np.where(bits[:, 0] == 1, high, low)
    features[:, j] = np.where(bits[:, 1] == 1, high, low)
    labels = bits[:, 0] ^ bits[:, 1]
    meta = {"hidden_pair": (min(i, j), max(i, j)), "value_range": (low, high)}
    return Dataset(features, labels, 2, (image_side, image_side), split="all", meta=meta)


# ---- perturbations -----------------------------------------------------

@dataclass(frozen=True)
class Perturbation:
    kind: str
    magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation {self.kind!r}; expected one of {PERTURBATIONS}")
        if self.kind == "local_shuffle" and int(self.magnitude) < 2:
            raise ValueError("local_shuffle window must be >= 2")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "Perturbation":
        """``kind`` or ``kind:magnitude``, e.g. ``brightness:0.1``."""
        kind, _, mag = text.strip().partition(":")
        defaults = {"brightness": 0.1, "contrast": 1.2, "local_shuffle": 3, "global_shuffle": 0}
        if kind not in defaults:
            raise ValueError(f"unknown perturbation {kind!r}")
        return cls(kind, float(mag) if mag else defaults[kind], seed)

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.magnitude:g}"


def _as_image(image, shape) -> np.ndarray:
    x = np.asarray(image, dtype=float)
    if shape is None:
        shape = x.shape
    shape = tuple(shape)
    if len(shape) == 1:
        shape = (1, shape[0])
    if len(shape) == 2:
        shape = shape + (1,)
    return x.reshape(shape)


def perturb(image, p: Perturbation, value_range=None, shape=None, rng=None) -> np.ndarray:
    """Apply one perturbation; output has the input's shape.

    ``shape`` gives ``(H, W)`` or ``(H, W, C)`` for flat inputs, and
    ``value_range`` the clamp bounds (defaults to the image's own range
    for brightness/contrast). Shuffles move whole pixels, so all channels of
    a location travel together.
    """
    x = np.asarray(image, dtype=float)
    lo, hi = value_range if value_range is not None else (float(x.min()), float(x.max()))
    if p.kind == "brightness":
        return np.clip(x + p.magnitude, lo, hi)
    if p.kind == "contrast":
        mean = x.mean()
        return np.clip(mean + p.magnitude * (x - mean), lo, hi)
    rng = np.random.default_rng(p.seed if rng is None else rng)
    img = _as_image(x, shape)
    h, w, c = img.shape
    pix = img.reshape(h * w, c)
    if p.kind == "global_shuffle":
        return pix[rng.permutation(h * w)].reshape(x.shape)
    win = int(p.magnitude)
    out = img.copy()
    for r0 in range(0, h, win):
        for c0 in range(0, w, win):
            tile = img[r0:r0 + win, c0:c0 + win]
            th, tw = tile.shape[:2]
            flat = tile.reshape(th * tw, c)
            out[r0:r0 + th, c0:c0 + tw] = flat[rng.permutation(th * tw)].reshape(th, tw, c)
    return out.reshape(x.shape)


def perturb_batch(features, p: Perturbation, value_range, shape) -> np.ndarray:
    """Perturb every row; shuffles draw from one stream seeded by ``p.seed``."""
    rng = np.random.default_rng(p.seed)
    return np.stack([perturb(x, p, value_range, shape, rng) for x in np.asarray(features, dtype=float)])


# ---- manifests ---------------------------------------------------------

@dataclass
class Manifest:
    name: str
    format: str
    paths: dict
    n_classes: Optional[int] = None
    shape: Optional[tuple] = None
    split: tuple = (0.6, 0.2, 0.2)
    seed: int = 0
    options: dict = field(default_factory=dict)
    base_dir: str = "."

    def resolve(self, key: str) -> str:
        p = self.paths[key]
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)


MANIFEST_FORMATS = ("csv", "idx", "pair_parity")


def load_manifest(path) -> Manifest:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON ({exc})") from None
    known = {"name", "format", "path", "paths", "C", "shape", "split", "seed", "options"}
    unknown = set(doc) - known
    if unknown:
        raise DataFormatError(f"{path}: unknown manifest keys {sorted(unknown)}")
    fmt = doc.get("format", "csv")
    if fmt not in MANIFEST_FORMATS:
        raise DataFormatError(f"{path}: unknown format {fmt!r}")
    paths = doc.get("paths") or ({"data": doc["path"]} if "path" in doc else {})
    return Manifest(doc.get("name", os.path.basename(str(path))), fmt, paths, doc.get("C"),
                    tuple(doc["shape"]) if doc.get("shape") else None,
                    tuple(doc.get("split", (0.6, 0.2, 0.2))), int(doc.get("seed", 0)),
                    dict(doc.get("options", {})), os.path.dirname(os.path.abspath(path)))


def write_manifest(path, name: str, fmt: str, paths: dict, n_classes: int, shape: Sequence[int],
                   split=(0.6, 0.2, 0.2), seed: int = 0, options: Optional[dict] = None) -> None:
    doc = {"name": name, "format": fmt, "paths": paths, "C": n_classes, "shape": list(shape),
           "split": list(split), "seed": seed}
    if options:
        doc["options"] = options
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def materialize(manifest: Manifest) -> Dataset:
    """Load the full dataset a manifest points at."""
    try:
        if manifest.format == "csv":
            ds = load_csv(manifest.resolve("data"), manifest.options.get("label_column", -1),
                          manifest.n_classes, manifest.shape)
        elif manifest.format == "idx":
            ds = load_idx(manifest.resolve("images"), manifest.resolve("labels"), manifest.n_classes)
        else:
            opts = manifest.options
            ds = synth_pair_parity(int(opts.get("n_samples", 10_000)), int(opts.get("side", 8)),
                                   int(opts.get("seed", manifest.seed)))
    except (OSError, KeyError) as exc:
        raise DataFormatError(f"cannot load dataset {manifest.name!r}: {exc}") from None
    if manifest.shape is not None and tuple(ds.shape) != tuple(manifest.shape):
        ds = replace(ds, shape=tuple(manifest.shape))
    return ds


def load_splits(manifest: Manifest):
    ds = materialize(manifest)
    train, val, test = split_dataset(ds, manifest.split, manifest.seed)
    value_range = (float(train.features.min()), float(train.features.max()))
    meta = dict(ds.meta, value_range=ds.meta.get("value_range", value_range))
    return tuple(replace(part, meta=meta) for part in (train, val, test))


def write_digits_csv(path) -> Dataset:
    """Export scikit-learn's 8x8 digits (1797 samples) as a CSV table."""
    from sklearn.datasets import load_digits

    bunch = load_digits()
    ds = Dataset(bunch.data.astype(float), bunch.target.astype(int), 10, (8, 8),
                 meta={"value_range": (0.0, 16.0)})
    write_csv(path, ds)
    return ds
