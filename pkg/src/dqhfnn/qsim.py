"""Exact two-qubit statevector and density-matrix simulation.

Amplitudes are indexed ``k = 2*q0 + q1`` (qubit 0 is the most significant
bit), so ``amp[1]`` is ``<01|psi>``. Every function accepts arbitrary leading
batch dimensions: a state is an array of shape ``(..., 4)`` and a density
matrix has shape ``(..., 4, 4)``. Rotation angles broadcast against the batch
dimensions of the state they act on.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ROTATIONS + ("CNOT",)

I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)

# Permutations of the 4 amplitudes implementing CNOT(control -> target).
_CNOT_PERM = {
    (0, 1): np.array([0, 1, 3, 2]),
    (1, 0): np.array([0, 3, 2, 1]),
}


@dataclass(frozen=True)
class GateSpec:
    """One gate of a circuit.

    ``qubits`` is ``(q,)`` for rotations and ``(control, target)`` for CNOT.
    A rotation carries either a literal ``angle`` or a ``param_slot`` that is
    resolved against a parameter vector at run time.
    """

    kind: str
    qubits: tuple[int, ...]
    angle: Optional[float] = None
    param_slot: Optional[int] = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        for q in self.qubits:
            _check_qubit(q)
        if self.kind == "CNOT":
            if len(self.qubits) != 2 or self.qubits[0] == self.qubits[1]:
                raise ValueError("CNOT needs distinct control and target")
            if self.angle is not None or self.param_slot is not None:
                raise ValueError("CNOT takes no angle")
        else:
            if len(self.qubits) != 1:
                raise ValueError(f"{self.kind} acts on exactly one qubit")
            if (self.angle is None) == (self.param_slot is None):
                raise ValueError("rotation needs exactly one of angle / param_slot")

    @property
    def is_rotation(self) -> bool:
        return self.kind != "CNOT"

    def resolve(self, theta: Sequence[float]) -> "GateSpec":
        """Return a copy with the parameter slot replaced by its value."""
        if self.param_slot is None:
            return self
        return GateSpec(self.kind, self.qubits, angle=float(theta[self.param_slot]))


def _check_qubit(qubit: int) -> None:
    if qubit not in (0, 1):
        raise ValueError(f"qubit index must be 0 or 1, got {qubit!r}")


def zero_state(batch_shape: tuple[int, ...] = ()) -> np.ndarray:
    state = np.zeros(batch_shape + (4,), dtype=complex)
    state[..., 0] = 1.0
    return state


def basis_state(bits: str) -> np.ndarray:
    """``basis_state("10")`` is |10>, i.e. qubit 0 set."""
    if len(bits) != 2 or set(bits) - {"0", "1"}:
        raise ValueError(f"expected a two-character bit string, got {bits!r}")
    state = np.zeros(4, dtype=complex)
    state[int(bits, 2)] = 1.0
    return state


def rotation_matrix(kind: str, angle) -> np.ndarray:
    """Batched 2x2 rotation matrices, shape ``angle.shape + (2, 2)``."""
    angle = np.asarray(angle, dtype=float)
    c = np.cos(angle / 2)
    s = np.sin(angle / 2)
    m = np.empty(angle.shape + (2, 2), dtype=complex)
    if kind == "RX":
        m[..., 0, 0] = c
        m[..., 0, 1] = -1j * s
        m[..., 1, 0] = -1j * s
        m[..., 1, 1] = c
    elif kind == "RY":
        m[..., 0, 0] = c
        m[..., 0, 1] = -s
        m[..., 1, 0] = s
        m[..., 1, 1] = c
    elif kind == "RZ":
        m[..., 0, 0] = np.exp(-0.5j * angle)
        m[..., 0, 1] = 0.0
        m[..., 1, 0] = 0.0
        m[..., 1, 1] = np.exp(0.5j * angle)
    else:
        raise ValueError(f"not a rotation: {kind!r}")
    return m


def apply_single(state: np.ndarray, matrix: np.ndarray, qubit: int) -> np.ndarray:
    """Apply a (possibly batched) 2x2 matrix to one qubit of ``state``."""
    _check_qubit(qubit)
    psi = np.asarray(state).reshape(np.shape(state)[:-1] + (2, 2))
    if qubit == 0:
        out = np.einsum("...ab,...bj->...aj", matrix, psi)
    else:
        out = np.einsum("...ab,...ib->...ia", matrix, psi)
    return out.reshape(out.shape[:-2] + (4,))


def apply_rotation(state: np.ndarray, kind: str, qubit: int, angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=float)
    if not np.all(np.isfinite(angle)):
        raise ValueError("rotation angle must be finite")
    return apply_single(state, rotation_matrix(kind, angle), qubit)


def apply_cnot(state: np.ndarray, control: int, target: int) -> np.ndarray:
    _check_qubit(control)
    _check_qubit(target)
    if control == target:
        raise ValueError("CNOT control and target must differ")
    return np.asarray(state)[..., _CNOT_PERM[(control, target)]]


def apply_gate(state: np.ndarray, gate: GateSpec, angle=None) -> np.ndarray:
    """Apply a gate; ``angle`` overrides the gate's own (needed for slots)."""
    if gate.kind == "CNOT":
        return apply_cnot(state, *gate.qubits)
    if angle is None:
        if gate.angle is None:
            raise ValueError("unresolved parameter slot; pass an angle")
        angle = gate.angle
    return apply_rotation(state, gate.kind, gate.qubits[0], angle)


def run_gates(state: np.ndarray, gates: Iterable[GateSpec]) -> np.ndarray:
    for gate in gates:
        state = apply_gate(state, gate)
    return state


def probabilities(state: np.ndarray) -> np.ndarray:
    return np.abs(state) ** 2


def expectation_z(state: np.ndarray, qubit: int) -> np.ndarray:
    """Exact <Z> on one qubit, ``2 P(bit=0) - 1``."""
    _check_qubit(qubit)
    p = probabilities(state)
    if qubit == 0:
        p0 = p[..., 0] + p[..., 1]
        p1 = p[..., 2] + p[..., 3]
    else:
        p0 = p[..., 0] + p[..., 2]
        p1 = p[..., 1] + p[..., 3]
    return np.clip(p0 - p1, -1.0, 1.0)


def gate_unitary(gate: GateSpec, angle=None) -> np.ndarray:
    """Full 4x4 unitary of a gate (batched over ``angle`` if given)."""
    if gate.kind == "CNOT":
        return np.eye(4, dtype=complex)[_CNOT_PERM[gate.qubits]]
    if angle is None:
        angle = gate.angle
    m = rotation_matrix(gate.kind, angle)
    eye = np.broadcast_to(I2, m.shape)
    if gate.qubits[0] == 0:
        return np.einsum("...ab,...cd->...acbd", m, eye).reshape(m.shape[:-2] + (4, 4))
    return np.einsum("...ab,...cd->...acbd", eye, m).reshape(m.shape[:-2] + (4, 4))


def embed(op: np.ndarray, qubit: int) -> np.ndarray:
    """Lift a 2x2 operator to the two-qubit space."""
    _check_qubit(qubit)
    return np.kron(op, I2) if qubit == 0 else np.kron(I2, op)


def to_density(state: np.ndarray) -> np.ndarray:
    state = np.asarray(state)
    return state[..., :, None] * state[..., None, :].conj()


def evolve_density(rho: np.ndarray, gates: Iterable[GateSpec]) -> np.ndarray:
    """Conjugate ``rho`` by each resolved gate in turn."""
    rho = np.asarray(rho, dtype=complex)
    for gate in gates:
        if gate.kind == "CNOT":
            perm = _CNOT_PERM[gate.qubits]
            rho = rho[..., perm, :][..., :, perm]
        else:
            u = gate_unitary(gate)
            rho = u @ rho @ u.conj().T
    return rho


def state_fidelity(psi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Overlap ``<psi|rho|psi>`` of a pure target with a density matrix."""
    psi = np.asarray(psi)
    f = np.einsum("...i,...ij,...j->...", psi.conj(), rho, psi).real
    return np.clip(f, 0.0, 1.0)


def is_valid_density(rho: np.ndarray, atol: float = 1e-10) -> bool:
    rho = np.asarray(rho)
    if not np.allclose(rho, np.swapaxes(rho, -1, -2).conj(), atol=1e-12):
        return False
    if not np.allclose(np.trace(rho, axis1=-2, axis2=-1), 1.0, atol=1e-12):
        return False
    return bool(np.all(np.linalg.eigvalsh(rho) >= -atol))
