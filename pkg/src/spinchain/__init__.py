"""Canonical versus grand canonical ensembles for 1D unbounded-spin lattices."""

from .errors import SpinChainError
from .model import (
    InteractionMatrix,
    ModelSpec,
    Observable,
    SingleSitePotential,
    SpinConfig,
    chain_spec,
    exchangeable_spec,
    validate_model,
)

__version__ = "0.1.0"

__all__ = [
    "InteractionMatrix",
    "ModelSpec",
    "Observable",
    "SingleSitePotential",
    "SpinChainError",
    "SpinConfig",
    "chain_spec",
    "exchangeable_spec",
    "validate_model",
]
