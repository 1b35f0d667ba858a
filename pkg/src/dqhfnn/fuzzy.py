"""Quantum fuzzy layer: dual-qubit memberships and log-geometric aggregation.

Shapes used throughout:

* ``pairs``: angles of shape ``(S, N_p, 2)`` (already normalized to [0, pi])
* ``thetas``: ``(C, P)``, one parameter vector per class
* memberships: ``(S, N_p, C, 2)``
* fuzzy features ``h``: ``(S, C)``
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import numpy as np

from .circuits import CircuitArchitecture, gate_angles, run_circuit, run_with_gate_angles

DEFAULT_CLAMP_EPS = 1e-12
SHIFT = np.pi / 2


def _memberships_from_state(state: np.ndarray) -> np.ndarray:
    p = np.abs(state) ** 2
    mu0 = p[..., 0] + p[..., 1]
    mu1 = p[..., 0] + p[..., 2]
    return np.clip(np.stack([mu0, mu1], axis=-1), 0.0, 1.0)


def membership(arch: CircuitArchitecture, theta, x_i, x_j) -> np.ndarray:
    """Joint membership ``[mu0, mu1]`` with ``mu_k = (<Z_k> + 1) / 2``.

    ``(<Z> + 1)/2`` is read off as the probability of bit ``k`` being 0, which
    avoids the cancellation of computing ``<Z>`` first.
    """
    return _memberships_from_state(run_circuit(arch, theta, x_i, x_j))


def aggregate(memberships, clamp_eps: float = DEFAULT_CLAMP_EPS) -> np.ndarray:
    """Mean over pairs of ``ln(max(mu0, eps) * max(mu1, eps))``.

    Accepts ``(N_p, 2)`` or any ``(..., N_p, 2)`` stack and reduces the
    pair axis (the second to last).
    """
    mu = np.asarray(memberships, dtype=float)
    if mu.shape[-1] != 2 or mu.ndim < 2 or mu.shape[-2] == 0:
        raise ValueError("aggregate needs at least one membership pair")
    logs = np.log(np.maximum(mu, clamp_eps)).sum(axis=-1)
    return logs.mean(axis=-1)


class QuantumFuzzyLayer:
    """One dual-qubit circuit per class, aggregated by the log-geometric mean."""

    def __init__(self, arch: CircuitArchitecture, thetas, clamp_eps: float = DEFAULT_CLAMP_EPS,
                 workers: int = 1):
        thetas = np.array(thetas, dtype=float)
        if thetas.ndim != 2 or thetas.shape[1] != arch.n_params:
            raise ValueError(f"thetas must have shape (C, {arch.n_params}), got {thetas.shape}")
        self.arch = arch
        self.thetas = thetas
        self.clamp_eps = clamp_eps
        self.workers = workers

    @property
    def n_classes(self) -> int:
        return self.thetas.shape[0]

    def _class_map(self, fn):
        """Evaluate ``fn(c)`` for every class, optionally on a thread pool.

        Classes are independent, so results do not depend on worker count.
        """
        classes = range(self.n_classes)
        if self.workers > 1 and self.n_classes > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(fn, classes))
        return [fn(c) for c in classes]

    def memberships(self, pairs: np.ndarray) -> np.ndarray:
        pairs = np.asarray(pairs, dtype=float)
        x_i, x_j = pairs[..., 0], pairs[..., 1]
        per_class = self._class_map(lambda c: membership(self.arch, self.thetas[c], x_i, x_j))
        return np.stack(per_class, axis=-2)

    def forward(self, pairs: np.ndarray) -> np.ndarray:
        """Fuzzy features ``(S, C)`` for pairs ``(S, N_p, 2)``; ``(C,)`` for one sample."""
        pairs = np.asarray(pairs, dtype=float)
        if pairs.ndim == 2:
            return self.forward(pairs[None])[0]
        mu = self.memberships(pairs)  # (S, N_p, C, 2)
        return aggregate(np.swapaxes(mu, 1, 2), self.clamp_eps)

    def membership_gradients(self, pairs: np.ndarray, c: int):
        """Memberships and their parameter-shift derivatives for class ``c``.

        Returns ``(mu, dmu)`` with shapes ``(S, N_p, 2)`` and
        ``(S, N_p, 2, P)``. A slot shared by several gates sums the
        shift-rule terms of each occurrence.
        """
        pairs = np.asarray(pairs, dtype=float)
        x_i, x_j = pairs[..., 0], pairs[..., 1]
        arch = self.arch
        angles = gate_angles(arch, self.thetas[c])
        mu = _memberships_from_state(run_with_gate_angles(arch, angles, x_i, x_j))
        dmu = np.zeros(mu.shape + (arch.n_params,))
        for k in arch.rotation_indices():
            slot = arch.gates[k].param_slot
            plus = list(angles)
            minus = list(angles)
            plus[k] = angles[k] + SHIFT
            minus[k] = angles[k] - SHIFT
            mu_p = _memberships_from_state(run_with_gate_angles(arch, plus, x_i, x_j))
            mu_m = _memberships_from_state(run_with_gate_angles(arch, minus, x_i, x_j))
            dmu[..., slot] += 0.5 * (mu_p - mu_m)
        return mu, dmu

    def feature_jacobian(self, pairs: np.ndarray, c: int):
        """``h[:, c]`` and ``dh[:, c]/dtheta_c`` of shape ``(S,)``, ``(S, P)``."""
        mu, dmu = self.membership_gradients(pairs, c)
        eps = self.clamp_eps
        active = mu > eps
        safe = np.where(active, mu, 1.0)
        h = np.log(np.maximum(mu, eps)).sum(axis=-1).mean(axis=-1)
        weight = np.where(active, 1.0 / safe, 0.0)
        dh = (weight[..., None] * dmu).sum(axis=-2).mean(axis=-2)
        return h, dh

    def backward_parameter_shift(self, pairs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(upstream * h)`` w.r.t. all thetas, shape ``(C, P)``."""
        pairs = np.asarray(pairs, dtype=float)
        upstream = np.asarray(upstream, dtype=float)
        if pairs.ndim == 2:
            pairs = pairs[None]
            upstream = upstream[None]

        def grad_c(c):
            _, dh = self.feature_jacobian(pairs, c)
            return upstream[:, c] @ dh

        return np.stack(self._class_map(grad_c), axis=0)

    def forward_backward(self, pairs: np.ndarray):
        """Forward features plus per-class Jacobians in one pass.

        Returns ``(h, jac)`` with shapes ``(S, C)`` and ``(S, C, P)``; the
        caller contracts ``jac`` with its upstream gradient.
        """
        results = self._class_map(lambda c: self.feature_jacobian(pairs, c))
        h = np.stack([r[0] for r in results], axis=1)
        jac = np.stack([r[1] for r in results], axis=1)
        return h, jac


def clamp_fraction(layer: QuantumFuzzyLayer, pairs: np.ndarray) -> float:
    mu = layer.memberships(pairs)
    return float(np.mean(mu <= layer.clamp_eps))


def direct_product(values: np.ndarray) -> float:
    """Plain product of membership values (the underflow-prone form)."""
    out = 1.0
    for v in np.asarray(values, dtype=float).ravel():
        out *= float(v)
    return out
