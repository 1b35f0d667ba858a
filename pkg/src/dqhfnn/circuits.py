"""Angle encoding, feature normalization and the trainable circuit registry.

Each architecture is the trainable block applied after the RY angle
encoding. Parameter vectors broadcast: ``theta`` may have shape ``(P,)`` or
``(..., P)``; the leading dims must broadcast with those of the inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .qsim import GateSpec, apply_gate

__all__ = [
    "FeatureRange",
    "CircuitArchitecture",
    "REGISTRY",
    "normalize_feature",
    "encode",
    "run_circuit",
    "run_with_gate_angles",
    "registry_lookup",
    "dump_architecture",
    "parse_architecture",
]


@dataclass(frozen=True)
class FeatureRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.hi - self.lo <= 0:
            raise ValueError(f"degenerate feature range [{self.lo}, {self.hi}]")


def normalize_feature(raw, feature_range: FeatureRange):
    """Map raw values linearly onto [0, pi], clamping outside the range."""
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw feature values must be finite")
    lo, hi = feature_range.lo, feature_range.hi
    out = np.clip((raw - lo) / (hi - lo), 0.0, 1.0) * np.pi
    return out if out.ndim else float(out)


def encode(x_i, x_j) -> np.ndarray:
    """RY(x_i) (x) RY(x_j) |00>, built in closed form."""
    x_i = np.asarray(x_i, dtype=float)
    x_j = np.asarray(x_j, dtype=float)
    a = np.stack([np.cos(x_i / 2), np.sin(x_i / 2)], axis=-1)
    b = np.stack([np.cos(x_j / 2), np.sin(x_j / 2)], axis=-1)
    a, b = np.broadcast_arrays(a, b)
    return (a[..., :, None] * b[..., None, :]).reshape(a.shape[:-1] + (4,)).astype(complex)


@dataclass(frozen=True)
class CircuitArchitecture:
    name: str
    gates: tuple[GateSpec, ...]
    n_params: int
    declared_symmetric: bool
    excluded_from_training: bool = False

    def __post_init__(self):
        slots = [g.param_slot for g in self.gates if g.param_slot is not None]
        if any(s < 0 or s >= self.n_params for s in slots):
            raise ValueError(f"{self.name}: parameter slot out of range")
        if set(slots) != set(range(self.n_params)):
            raise ValueError(f"{self.name}: every parameter slot must be used")

    @property
    def declared_entangling(self) -> bool:
        return any(g.kind == "CNOT" for g in self.gates)

    @property
    def P(self) -> int:
        return self.n_params

    def rotation_indices(self) -> list[int]:
        """Positions in ``gates`` of the parameterized rotations."""
        return [k for k, g in enumerate(self.gates) if g.param_slot is not None]


def _rot(kind: str, q: int, slot: int) -> GateSpec:
    return GateSpec(kind, (q,), param_slot=slot)


def _cnot(c: int, t: int) -> GateSpec:
    return GateSpec("CNOT", (c, t))


def _d_layer(offset: int) -> list[GateSpec]:
    return [
        _rot("RX", 0, offset), _rot("RZ", 0, offset + 1),
        _rot("RX", 1, offset + 2), _rot("RZ", 1, offset + 3),
        _cnot(0, 1), _cnot(1, 0),
    ]


def _build_registry() -> dict[str, CircuitArchitecture]:
    archs = [
        CircuitArchitecture("A", (_rot("RX", 0, 0), _rot("RX", 1, 1)), 2, True),
        CircuitArchitecture("B", (_cnot(0, 1), _rot("RX", 0, 0), _rot("RZ", 1, 1)), 2, False),
        CircuitArchitecture("C", (_rot("RX", 0, 0), _cnot(0, 1), _rot("RZ", 1, 1)), 2, False),
        CircuitArchitecture("D", tuple(_d_layer(0)), 4, True),
        CircuitArchitecture("E", tuple(_d_layer(0)[:4]), 4, True),
        CircuitArchitecture("F", tuple(_d_layer(0) + _d_layer(4)), 8, True,
                            excluded_from_training=True),
        CircuitArchitecture("G", (_rot("RX", 0, 0), _rot("RZ", 0, 1), _rot("RX", 1, 2)), 3, False),
    ]
    return {a.name: a for a in archs}


REGISTRY: dict[str, CircuitArchitecture] = _build_registry()


def registry_lookup(name: str) -> CircuitArchitecture:
    try:
        return REGISTRY[name.strip().upper()]
    except (KeyError, AttributeError):
        raise ValueError(f"unknown architecture {name!r}; expected one of {sorted(REGISTRY)}") from None


def identity_architecture() -> CircuitArchitecture:
    """Empty trainable block (P=0); used as the degenerate reference."""
    return CircuitArchitecture("I", (), 0, True)


def gate_angles(arch: CircuitArchitecture, theta) -> list[Optional[np.ndarray]]:
    """Per-gate angle arrays resolved from ``theta`` (None for CNOTs)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (arch.n_params,) and not (arch.n_params == 0 and theta.size == 0):
        raise ValueError(
            f"architecture {arch.name} expects {arch.n_params} parameters, got shape {theta.shape}"
        )
    angles = []
    for g in arch.gates:
        if g.param_slot is not None:
            angles.append(theta[..., g.param_slot])
        elif g.is_rotation:
            angles.append(np.asarray(g.angle, dtype=float))
        else:
            angles.append(None)
    return angles


def run_with_gate_angles(arch: CircuitArchitecture, angles: Sequence, x_i, x_j) -> np.ndarray:
    state = encode(x_i, x_j)
    for gate, angle in zip(arch.gates, angles):
        state = apply_gate(state, gate, angle)
    return state


def run_circuit(arch: CircuitArchitecture, theta, x_i, x_j) -> np.ndarray:
    """Final state U_q(theta) U_enc(x_i, x_j) |00>."""
    return run_with_gate_angles(arch, gate_angles(arch, theta), x_i, x_j)


# --- textual dump: "name;P;RX@0#s0,CNOT@0>1,RZ@1#0.5" ---------------------

def _gate_token(g: GateSpec) -> str:
    if g.kind == "CNOT":
        return f"CNOT@{g.qubits[0]}>{g.qubits[1]}"
    arg = f"s{g.param_slot}" if g.param_slot is not None else repr(float(g.angle))
    return f"{g.kind}@{g.qubits[0]}#{arg}"


def dump_architecture(arch: CircuitArchitecture) -> str:
    return f"{arch.name};{arch.n_params};" + ",".join(_gate_token(g) for g in arch.gates)


def parse_architecture(text: str, symmetric: bool = False) -> CircuitArchitecture:
    try:
        name, p, body = text.strip().split(";")
        gates = []
        for tok in filter(None, body.split(",")):
            kind, rest = tok.split("@")
            if kind == "CNOT":
                c, t = rest.split(">")
                gates.append(GateSpec("CNOT", (int(c), int(t))))
            else:
                q, arg = rest.split("#")
                if arg.startswith("s"):
                    gates.append(GateSpec(kind, (int(q),), param_slot=int(arg[1:])))
                else:
                    gates.append(GateSpec(kind, (int(q),), angle=float(arg)))
        n_params = int(p)
    except ValueError as exc:
        raise ValueError(f"malformed architecture dump {text!r}: {exc}") from None
    if name in REGISTRY:
        ref = REGISTRY[name]
        symmetric = ref.declared_symmetric
        excluded = ref.excluded_from_training
    else:
        excluded = False
    return CircuitArchitecture(name, tuple(gates), n_params, symmetric, excluded)
