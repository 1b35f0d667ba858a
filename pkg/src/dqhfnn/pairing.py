"""Feature-pair plans over images and flat vectors.

A plan is built once from ``(config, shape)`` and frozen. Fixed pairs come
first: half local (both endpoints in the same block), half global (endpoints
in different blocks, weighted towards distant blocks). Random pairs are then
drawn uniformly from the unordered pairs not yet used. Multi-channel images
replicate the plan in every channel using channel-local indices.

Flat index conventions: images are stored channel-major, so pixel
``(ch, r, c)`` of an ``H x W`` image is ``ch*H*W + r*W + c`` and its
channel-local index is ``r*W + c``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

GRID_IMAGE = "grid_image"
VECTOR_INDEX = "vector_index"
DEFAULT_GRID = (4, 4)
_ENUMERATE_LIMIT = 200_000


@dataclass(frozen=True)
class PairingConfig:
    total_pairs: Optional[int] = None
    sampling_ratio: Optional[float] = None
    random_fraction: float = 1.0
    grid: Optional[tuple[int, int]] = None
    center_bias: bool = True
    seed: int = 0
    must_include: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if (self.total_pairs is None) == (self.sampling_ratio is None):
            raise ValueError("set exactly one of total_pairs / sampling_ratio")
        if self.total_pairs is not None and self.total_pairs < 0:
            raise ValueError("total_pairs must be non-negative")
        if self.sampling_ratio is not None and not 0.0 < self.sampling_ratio <= 1.0:
            raise ValueError("sampling_ratio must lie in (0, 1]")
        if not 0.0 <= self.random_fraction <= 1.0:
            raise ValueError("random_fraction must lie in [0, 1]")
        if self.grid is not None and (len(self.grid) != 2 or min(self.grid) < 1):
            raise ValueError(f"invalid grid {self.grid!r}")


# Reference pairing configurations (a)-(d) for 32x32 inputs.
TABLE_CONFIGS = {
    "a": dict(total_pairs=512, random_fraction=0.30),
    "b": dict(total_pairs=512, random_fraction=0.50),
    "c": dict(total_pairs=153, random_fraction=1.0),
    "d": dict(total_pairs=256, random_fraction=1.0),
}


@dataclass(frozen=True)
class PairingPlan:
    pairs: np.ndarray
    origins: tuple[str, ...]
    mode: str
    shape: tuple[int, ...]
    grid: tuple[int, int]
    seed: int
    n_fixed: int = field(default=0)
    n_random: int = field(default=0)

    @property
    def channels(self) -> int:
        return self.shape[2] if self.mode == GRID_IMAGE else 1

    @property
    def channel_size(self) -> int:
        return self.shape[0] * self.shape[1] if self.mode == GRID_IMAGE else self.shape[0]

    @property
    def n_features(self) -> int:
        return self.channel_size * self.channels

    @property
    def total_pairs(self) -> int:
        return len(self.pairs) * self.channels

    @property
    def n_scalar_features(self) -> int:
        return 2 * self.total_pairs

    def global_pairs(self) -> np.ndarray:
        """All ``(channels * n, 2)`` flat indices, channel by channel."""
        offsets = np.arange(self.channels)[:, None, None] * self.channel_size
        return (self.pairs[None, :, :] + offsets).reshape(-1, 2)

    def to_csv(self, header: Optional[str] = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(header.rstrip("\n") + "\n")
        dims = "x".join(str(d) for d in self.shape)
        buf.write(f"# mode={self.mode} shape={dims} grid={self.grid[0]}x{self.grid[1]} seed={self.seed}\n")
        buf.write("channel,i,j,origin\n")
        for ch in range(self.channels):
            for (i, j), origin in zip(self.pairs, self.origins):
                buf.write(f"{ch},{i},{j},{origin}\n")
        return buf.getvalue()


def _floor(x: float) -> int:
    # 512 * 0.3 is 153.6000000001-ish in binary; guard against the opposite case too
    return int(math.floor(x + 1e-9))


def pair_budget(n: int, ratio: float = 0.30, width: Optional[int] = None) -> int:
    """``floor(n*n/2 * ratio)`` pairs per channel (``n*width`` if non-square)."""
    if n < 2:
        raise ValueError("side length must be >= 2")
    cells = n * (width if width is not None else n)
    return _floor(cells / 2 * ratio)


def split_counts(total: int, random_fraction: float) -> tuple[int, int]:
    """``(n_fixed, n_random)``; the random count is floored."""
    n_random = _floor(total * random_fraction)
    return total - n_random, n_random


def _normalize_shape(shape) -> tuple[str, tuple[int, ...]]:
    if isinstance(shape, int):
        return VECTOR_INDEX, (int(shape),)
    shape = tuple(int(s) for s in shape)
    if len(shape) == 1:
        return VECTOR_INDEX, shape
    if len(shape) == 2:
        return GRID_IMAGE, shape + (1,)
    if len(shape) == 3:
        return GRID_IMAGE, shape
    raise ValueError(f"unsupported shape {shape!r}")


def _triangular(n: int) -> np.ndarray:
    return np.array([min(k + 1, n - k) for k in range(n)], dtype=float)


class _Blocks:
    """Block structure and local/global geometry for one channel."""

    def __init__(self, mode: str, shape: tuple[int, ...], grid: tuple[int, int], center_bias: bool):
        self.mode = mode
        if mode == GRID_IMAGE:
            h, w = shape[0], shape[1]
            rows, cols = min(grid[0], h), min(grid[1], w)
            r_edges = np.linspace(0, h, rows + 1).round().astype(int)
            c_edges = np.linspace(0, w, cols + 1).round().astype(int)
            block_of = np.empty((h, w), dtype=int)
            centers = []
            for br in range(rows):
                for bc in range(cols):
                    block_of[r_edges[br]:r_edges[br + 1], c_edges[bc]:c_edges[bc + 1]] = br * cols + bc
                    centers.append((br, bc))
            self.block_of = block_of.ravel()
            self.centers = np.array(centers, dtype=float)
            weights = np.outer(_triangular(rows), _triangular(cols)).ravel()
            # local candidates: 8-neighbour pixel pairs inside one block
            local = []
            for r in range(h):
                for c in range(w):
                    for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1)):
                        r2, c2 = r + dr, c + dc
                        if 0 <= r2 < h and 0 <= c2 < w:
                            a, b = r * w + c, r2 * w + c2
                            if self.block_of[a] == self.block_of[b]:
                                local.append((min(a, b), max(a, b)))
            self.grid = (rows, cols)
        else:
            length = shape[0]
            n_blocks = min(grid[0] * grid[1], max(1, length // 2))
            edges = np.linspace(0, length, n_blocks + 1).round().astype(int)
            block_of = np.empty(length, dtype=int)
            for b in range(n_blocks):
                block_of[edges[b]:edges[b + 1]] = b
            self.block_of = block_of
            self.centers = np.arange(n_blocks, dtype=float)[:, None]
            weights = _triangular(n_blocks)
            window = max(2, length // 16)
            local = []
            for start in range(0, length, window):
                idx = [k for k in range(start, min(start + window, length))]
                for x in range(len(idx)):
                    for y in range(x + 1, len(idx)):
                        if block_of[idx[x]] == block_of[idx[y]]:
                            local.append((idx[x], idx[y]))
            self.grid = (1, n_blocks) if grid != (1, 1) else (1, 1)
        self.n_blocks = len(self.centers)
        self.weights = weights if center_bias else np.ones(self.n_blocks)
        self.local = np.array(local, dtype=int).reshape(-1, 2)
        self.members = [np.flatnonzero(self.block_of == b) for b in range(self.n_blocks)]

    def local_probabilities(self) -> np.ndarray:
        if len(self.local) == 0:
            return np.zeros(0)
        blk = self.block_of[self.local[:, 0]]
        per_block = np.bincount(blk, minlength=self.n_blocks).astype(float)
        p = self.weights[blk] / per_block[blk]
        return p / p.sum()

    def block_pairs(self):
        pairs, weights = [], []
        for a in range(self.n_blocks):
            for b in range(a + 1, self.n_blocks):
                d = float(np.linalg.norm(self.centers[a] - self.centers[b]))
                pairs.append((a, b))
                weights.append(d * self.weights[a] * self.weights[b])
        w = np.array(weights)
        return pairs, (w / w.sum() if len(w) else w)


def _draw_local(blocks: _Blocks, n: int, rng, taken: set) -> list[tuple[int, int]]:
    cand = [tuple(p) for p in blocks.local.tolist() if tuple(p) not in taken]
    if n == 0 or not cand:
        return []
    cand_arr = np.array(cand)
    blk = blocks.block_of[cand_arr[:, 0]]
    per_block = np.bincount(blk, minlength=blocks.n_blocks).astype(float)
    p = blocks.weights[blk] / per_block[blk]
    p = p / p.sum()
    k = min(n, len(cand))
    pick = rng.choice(len(cand), size=k, replace=False, p=p)
    return [cand[t] for t in pick]


def _draw_global(blocks: _Blocks, n: int, rng, taken: set) -> list[tuple[int, int]]:
    if n == 0 or blocks.n_blocks < 2:
        return []
    bpairs, probs = blocks.block_pairs()
    capacity = sum(len(blocks.members[a]) * len(blocks.members[b]) for a, b in bpairs)
    out: list[tuple[int, int]] = []
    seen = set(taken)
    attempts = 0
    limit = 50 * n + 1000
    while len(out) < n and attempts < limit and len(seen) - len(taken) < capacity:
        attempts += 1
        a, b = bpairs[rng.choice(len(bpairs), p=probs)]
        i = int(rng.choice(blocks.members[a]))
        j = int(rng.choice(blocks.members[b]))
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        out.append(key)
    return out


def _draw_random(size: int, n: int, rng, taken: set) -> list[tuple[int, int]]:
    if n == 0:
        return []
    available = size * (size - 1) // 2 - len(taken)
    if n > available:
        raise ValueError(f"requested {n} random pairs but only {available} distinct pairs remain")
    if size * (size - 1) // 2 <= _ENUMERATE_LIMIT or n > available // 2:
        iu, ju = np.triu_indices(size, k=1)
        rest = [(int(i), int(j)) for i, j in zip(iu, ju) if (int(i), int(j)) not in taken]
        pick = rng.choice(len(rest), size=n, replace=False)
        return [rest[t] for t in pick]
    out, seen = [], set(taken)
    while len(out) < n:
        i, j = (int(v) for v in rng.choice(size, size=2, replace=False))
        key = (min(i, j), max(i, j))
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out


def _auto_grid(mode: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if mode == GRID_IMAGE:
        return (min(DEFAULT_GRID[0], shape[0]), min(DEFAULT_GRID[1], shape[1]))
    return DEFAULT_GRID


def plan_total(config: PairingConfig, shape) -> int:
    mode, dims = _normalize_shape(shape)
    if config.total_pairs is not None:
        return int(config.total_pairs)
    if mode == GRID_IMAGE:
        return pair_budget(dims[0], config.sampling_ratio, width=dims[1])
    return _floor(dims[0] / 2 * config.sampling_ratio)


def build_plan(config: PairingConfig, shape) -> PairingPlan:
    mode, dims = _normalize_shape(shape)
    size = dims[0] * dims[1] if mode == GRID_IMAGE else dims[0]
    total = plan_total(config, shape)
    if total > size * (size - 1) // 2:
        raise ValueError(f"budget of {total} pairs exceeds the {size * (size - 1) // 2} distinct pairs available")
    n_fixed, n_random = split_counts(total, config.random_fraction)
    rng = np.random.default_rng(config.seed)
    grid = tuple(config.grid) if config.grid is not None else _auto_grid(mode, dims)
    blocks = _Blocks(mode, dims, grid, config.center_bias)

    chosen: list[tuple[int, int]] = []
    origins: list[str] = []
    taken: set = set()

    def add(pairs, origin):
        for p in pairs:
            chosen.append(p)
            origins.append(origin)
            taken.add(p)

    forced = []
    for i, j in config.must_include:
        if not (0 <= i < size and 0 <= j < size) or i == j:
            raise ValueError(f"must_include pair {(i, j)} is invalid for shape {dims}")
        key = (min(i, j), max(i, j))
        if key not in forced:
            forced.append(key)
    if len(forced) > total:
        raise ValueError("more must_include pairs than the pair budget")
    add(forced, "fixed")
    if len(forced) > n_fixed:
        n_random -= len(forced) - n_fixed
        n_fixed = len(forced)

    remaining = n_fixed - len(forced)
    n_local = remaining - remaining // 2
    n_global = remaining // 2
    if blocks.n_blocks < 2:
        n_local, n_global = remaining, 0
    got = _draw_local(blocks, n_local, rng, taken)
    add(got, "fixed")
    n_global += n_local - len(got)
    got = _draw_global(blocks, n_global, rng, taken)
    add(got, "fixed")
    shortfall = n_global - len(got)
    if shortfall:
        got = _draw_local(blocks, shortfall, rng, taken)
        add(got, "fixed")
        shortfall -= len(got)
    if shortfall:
        raise ValueError(f"cannot place {shortfall} more fixed pairs on shape {dims}")

    add(_draw_random(size, n_random, rng, taken), "random")
    pairs = np.array(chosen, dtype=int).reshape(-1, 2)
    return PairingPlan(pairs, tuple(origins), mode, dims, tuple(blocks.grid), config.seed,
                       n_fixed=n_fixed, n_random=n_random)


def extract_pairs(sample, plan: PairingPlan) -> np.ndarray:
    """Gather raw value pairs in plan order.

    ``sample`` may be one sample (any shape with ``plan.n_features``
    elements) or a batch ``(S, n_features)``; the result has shape
    ``(channels * n, 2)`` or ``(S, channels * n, 2)``.
    """
    x = np.asarray(sample, dtype=float)
    # batch first, so a (1, n_features) batch keeps its leading axis
    if x.ndim >= 2 and int(np.prod(x.shape[1:])) == plan.n_features:
        flat = x.reshape(x.shape[0], -1)
        return flat[:, plan.global_pairs()]
    if x.size == plan.n_features:
        flat = x.reshape(-1)
        return flat[plan.global_pairs()]
    raise ValueError(f"sample shape {x.shape} does not match plan with {plan.n_features} features")


def coverage(plan: PairingPlan) -> float:
    """Fraction of grid blocks containing at least one pair endpoint."""
    blocks = _Blocks(plan.mode, plan.shape, plan.grid, False)
    hit = np.unique(blocks.block_of[plan.pairs.ravel()]) if len(plan.pairs) else []
    return len(hit) / blocks.n_blocks


def plan_from_csv(text: str, shape: Optional[Sequence[int]] = None) -> PairingPlan:
    """Inverse of :meth:`PairingPlan.to_csv`."""
    meta = {}
    rows = []
    for line in text.splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        elif line.strip():
            rows.append(line)
    reader = csv.DictReader(rows)
    per_channel: dict[int, list] = {}
    for rec in reader:
        per_channel.setdefault(int(rec["channel"]), []).append((int(rec["i"]), int(rec["j"]), rec["origin"]))
    if shape is None:
        if "shape" not in meta:
            raise ValueError("plan CSV carries no shape; pass shape explicitly")
        shape = tuple(int(s) for s in meta["shape"].split("x"))
    mode, dims = _normalize_shape(tuple(shape))
    if mode != meta.get("mode", mode):
        raise ValueError("plan mode does not match shape")
    channels = sorted(per_channel)
    first = per_channel[channels[0]] if channels else []
    for ch in channels:
        if per_channel[ch] != first:
            raise ValueError(f"channel {ch} differs from channel 0")
    pairs = np.array([(i, j) for i, j, _ in first], dtype=int).reshape(-1, 2)
    origins = tuple(o for _, _, o in first)
    grid = tuple(int(g) for g in meta.get("grid", "1x1").split("x"))
    return PairingPlan(pairs, origins, mode, dims, grid, int(meta.get("seed", 0)),
                       n_fixed=origins.count("fixed"), n_random=origins.count("random"))
