"""Dual-qubit hierarchical fuzzy neural network on an exact two-qubit simulator."""

__version__ = "0.1.0"

from .circuits import REGISTRY, registry_lookup, run_circuit
from .fuzzy import QuantumFuzzyLayer, aggregate, membership
from .model import DQHFNN, ModelConfig, Preprocessor

__all__ = [
    "__version__",
    "REGISTRY",
    "registry_lookup",
    "run_circuit",
    "QuantumFuzzyLayer",
    "aggregate",
    "membership",
    "DQHFNN",
    "ModelConfig",
    "Preprocessor",
]
