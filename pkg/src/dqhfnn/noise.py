"""Single-qubit Kraus channels and the average-fidelity sweep."""
from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .circuits import CircuitArchitecture, FeatureRange, gate_angles, normalize_feature, run_circuit
from .qsim import I2, PAULI_X, PAULI_Y, PAULI_Z, embed, state_fidelity, to_density

CHANNEL_KINDS = ("AD", "DP", "BF", "PF")
INPUT_RANGE = FeatureRange(-1.0, 1.0)


def kraus_operators(kind: str, gamma: float) -> list[np.ndarray]:
    if kind not in CHANNEL_KINDS:
        raise ValueError(f"unknown channel {kind!r}; expected one of {CHANNEL_KINDS}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if kind == "AD":
        return [
            np.array([[1, 0], [0, np.sqrt(1 - gamma)]], dtype=complex),
            np.array([[0, np.sqrt(gamma)], [0, 0]], dtype=complex),
        ]
    if kind == "BF":
        return [np.sqrt(1 - gamma) * I2, np.sqrt(gamma) * PAULI_X]
    if kind == "PF":
        return [np.sqrt(1 - gamma) * I2, np.sqrt(gamma) * PAULI_Z]
    # rho -> (1 - gamma) rho + gamma I/2
    w = np.sqrt(gamma / 4)
    return [np.sqrt(1 - 3 * gamma / 4) * I2, w * PAULI_X, w * PAULI_Y, w * PAULI_Z]


@dataclass(frozen=True)
class NoiseChannel:
    kind: str
    gamma: float
    kraus: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kraus", tuple(kraus_operators(self.kind, self.gamma)))

    def completeness_residual(self) -> float:
        total = sum(e.conj().T @ e for e in self.kraus)
        return float(np.max(np.abs(total - I2)))


def apply_channel(rho: np.ndarray, channel: NoiseChannel, qubit: int) -> np.ndarray:
    """Operator-sum evolution of one qubit of a two-qubit density matrix."""
    rho = np.asarray(rho, dtype=complex)
    out = np.zeros_like(rho)
    for e in channel.kraus:
        big = embed(e, qubit)
        out = out + big @ rho @ big.conj().T
    return out


def apply_single_qubit_channel(rho: np.ndarray, channel: NoiseChannel) -> np.ndarray:
    """Same map on a lone qubit (2x2 density matrices)."""
    return sum(e @ rho @ e.conj().T for e in channel.kraus)


@dataclass
class FidelitySweepReport:
    arch: str
    gammas: list[float]
    fidelities: dict[str, list[float]]
    n_inputs: int
    seed: int
    input_map: str = "raw"

    def rows(self):
        for kind in self.fidelities:
            for g, f in zip(self.gammas, self.fidelities[kind]):
                yield kind, g, f

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(header.rstrip("\n") + "\n")
        buf.write("channel,gamma,mean_fidelity,n_inputs,seed\n")
        for kind, g, f in self.rows():
            buf.write(f"{kind},{g:.4f},{f:.4f},{self.n_inputs},{self.seed}\n")
        return buf.getvalue()

    def table(self) -> str:
        kinds = list(self.fidelities)
        lines = ["gamma   " + "  ".join(f"{k:>7s}" for k in kinds)]
        for n, g in enumerate(self.gammas):
            lines.append(f"{g:6.4f}  " + "  ".join(f"{self.fidelities[k][n]:7.4f}" for k in kinds))
        return "\n".join(lines)


def sweep_inputs(n_inputs: int, seed: int, input_map: str = "raw") -> np.ndarray:
    """Input angle pairs of shape ``(n_inputs, 2)`` drawn from U[-1, 1]^2.

    ``input_map="raw"`` feeds the draws to the RY encoders as angles in
    radians; ``"normalize"`` first stretches them onto [0, pi].
    """
    raw = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n_inputs, 2))
    if input_map == "raw":
        return raw
    if input_map == "normalize":
        return normalize_feature(raw, INPUT_RANGE)
    raise ValueError(f"unknown input map {input_map!r}")


def noisy_fidelities(arch: CircuitArchitecture, theta, angles: np.ndarray, channel: NoiseChannel):
    psi = run_circuit(arch, theta, angles[:, 0], angles[:, 1])
    rho = to_density(psi)
    for q in (0, 1):
        rho = apply_channel(rho, channel, q)
    return state_fidelity(psi, rho)


def fidelity_sweep(arch: CircuitArchitecture, theta, kinds=CHANNEL_KINDS, gammas=(0.01, 0.1),
                   n_inputs: int = 200, seed: int = 0, input_map: str = "raw",
                   workers: int = 1) -> FidelitySweepReport:
    """Mean fidelity of the end-of-circuit noisy state against the ideal one.

    Each channel acts once on each qubit after the whole unitary. The same
    ``n_inputs`` input pairs (fixed by ``seed``) are used for every cell.
    """
    if n_inputs < 1:
        raise ValueError("n_inputs must be >= 1")
    gate_angles(arch, theta)  # validates theta length
    gammas = sorted(float(g) for g in gammas)
    angles = sweep_inputs(n_inputs, seed, input_map)
    cells = [(k, g) for k in kinds for g in gammas]

    def evaluate(cell):
        kind, g = cell
        return float(np.mean(noisy_fidelities(arch, theta, angles, NoiseChannel(kind, g))))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            values = list(pool.map(evaluate, cells))
    else:
        values = [evaluate(c) for c in cells]
    fids = {k: [] for k in kinds}
    for (k, _), v in zip(cells, values):
        fids[k].append(v)
    return FidelitySweepReport(arch.name, gammas, fids, n_inputs, seed, input_map)


def parse_gamma_grid(text: str) -> list[float]:
    """``"start:stop:count"`` (inclusive, linear) or a comma list."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, count = text.split(":")
            count = int(count)
            if count < 1:
                raise ValueError("count must be positive")
            grid = np.linspace(float(start), float(stop), count).tolist()
        else:
            grid = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ValueError(f"invalid gamma grid {text!r}: {exc}") from None
    if not grid or any(not 0.0 <= g <= 1.0 for g in grid):
        raise ValueError(f"invalid gamma grid {text!r}: values must lie in [0, 1]")
    return [round(g, 12) for g in grid]
