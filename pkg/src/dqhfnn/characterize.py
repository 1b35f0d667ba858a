"""Expressibility (KL to Haar) and Meyer-Wallach entangling capability.

Sampling is split into fixed-size chunks; chunk ``k`` draws from the
substream ``SeedSequence(seed).spawn(...)[k]``. Chunks may run on several
workers, and since the chunking never depends on the worker count the merged
histogram (and therefore every report) is identical for any ``workers``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .circuits import CircuitArchitecture, run_circuit

DEFAULT_BINS = 75
DEFAULT_PAIRS = 5000
DEFAULT_SAMPLES = 2000
SMOOTHING = 1e-9
CHUNK = 1000


@dataclass(frozen=True)
class ExpressibilityReport:
    arch: str
    n_pairs: int
    n_bins: int
    kl_value: float
    seed: int
    pinned_inputs: bool = False

    def csv_row(self) -> str:
        return f"{self.arch},expressibility,{self.kl_value:.3f},{self.n_pairs},{self.seed}"


@dataclass(frozen=True)
class EntanglementReport:
    arch: str
    n_samples: int
    mean_q: float
    seed: int
    pinned_inputs: bool = False

    def csv_row(self) -> str:
        return f"{self.arch},entanglement,{self.mean_q:.3f},{self.n_samples},{self.seed}"


def haar_fidelity_pdf(f, dim: int = 4):
    """Density of ``|<psi|phi>|^2`` for Haar-random pure states."""
    if dim < 2:
        raise ValueError("dim must be >= 2")
    f = np.asarray(f, dtype=float)
    if np.any((f < 0) | (f > 1)):
        raise ValueError("fidelity must lie in [0, 1]")
    out = (dim - 1) * (1.0 - f) ** (dim - 2)
    return out if out.ndim else float(out)


def haar_bin_masses(n_bins: int, dim: int = 4) -> np.ndarray:
    """Exact Haar probability of each equal-width fidelity bin on [0, 1]."""
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    cdf_tail = (1.0 - edges) ** (dim - 1)
    return cdf_tail[:-1] - cdf_tail[1:]


def kl_divergence(p, q) -> float:
    """``sum p ln(p/q)`` with ``0 ln 0 = 0``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise ValueError("q must be positive wherever p is")
    return float(max(np.sum(p[mask] * np.log(p[mask] / q[mask])), 0.0))


def smoothed_kl(counts: np.ndarray, reference: np.ndarray, eps: float = SMOOTHING) -> float:
    """KL between a histogram and reference masses after additive smoothing."""
    p = np.asarray(counts, dtype=float)
    p = p / p.sum() + eps
    q = np.asarray(reference, dtype=float) + eps
    return kl_divergence(p / p.sum(), q / q.sum())


def meyer_wallach(state) -> np.ndarray:
    """Q = 2 (1 - tr rho_0^2); equal to the two-qubit average form."""
    psi = np.asarray(state).reshape(np.shape(state)[:-1] + (2, 2))
    rho0 = psi @ np.swapaxes(psi, -1, -2).conj()
    purity = np.einsum("...ij,...ji->...", rho0, rho0).real
    q = np.clip(2.0 * (1.0 - purity), 0.0, 1.0)
    return q if q.ndim else float(q)


def _chunks(n: int) -> list[int]:
    sizes = [CHUNK] * (n // CHUNK)
    if n % CHUNK:
        sizes.append(n % CHUNK)
    return sizes


def _run_chunks(fn, n: int, seed: int, workers: int):
    sizes = _chunks(n)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(sizes, streams))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda job: fn(*job), jobs))
    return [fn(*job) for job in jobs]


def _sample_states(arch, rng, size, pinned_inputs):
    theta = rng.uniform(0.0, 2 * np.pi, size=(size, arch.n_params))
    if pinned_inputs:
        x = np.zeros((size, 2))
    else:
        x = rng.uniform(0.0, np.pi, size=(size, 2))
    return run_circuit(arch, theta, x[:, 0], x[:, 1])


def fidelity_samples(arch: CircuitArchitecture, n_pairs: int, seed: int,
                     pinned_inputs: bool = False, workers: int = 1) -> np.ndarray:
    def chunk(size, stream):
        rng = np.random.default_rng(stream)
        a = _sample_states(arch, rng, size, pinned_inputs)
        b = _sample_states(arch, rng, size, pinned_inputs)
        return np.abs(np.einsum("ni,ni->n", a.conj(), b)) ** 2

    return np.concatenate(_run_chunks(chunk, n_pairs, seed, workers))


def expressibility(arch: CircuitArchitecture, n_pairs: int = DEFAULT_PAIRS, n_bins: int = DEFAULT_BINS,
                   seed: int = 0, pinned_inputs: bool = False, workers: int = 1) -> ExpressibilityReport:
    if n_pairs < 100:
        raise ValueError("n_pairs must be >= 100")
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    f = np.clip(fidelity_samples(arch, n_pairs, seed, pinned_inputs, workers), 0.0, 1.0)
    counts, _ = np.histogram(f, bins=n_bins, range=(0.0, 1.0))
    kl = smoothed_kl(counts, haar_bin_masses(n_bins))
    return ExpressibilityReport(arch.name, n_pairs, n_bins, kl, seed, pinned_inputs)


def entanglement_samples(arch: CircuitArchitecture, n_samples: int, seed: int,
                         pinned_inputs: bool = False, workers: int = 1) -> np.ndarray:
    def chunk(size, stream):
        rng = np.random.default_rng(stream)
        return meyer_wallach(_sample_states(arch, rng, size, pinned_inputs))

    return np.concatenate(_run_chunks(chunk, n_samples, seed, workers))


def entangling_capability(arch: CircuitArchitecture, n_samples: int = DEFAULT_SAMPLES, seed: int = 0,
                          pinned_inputs: bool = False, workers: int = 1) -> EntanglementReport:
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    q = entanglement_samples(arch, n_samples, seed, pinned_inputs, workers)
    return EntanglementReport(arch.name, n_samples, float(np.mean(q)), seed, pinned_inputs)
