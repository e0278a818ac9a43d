"""Spatial confounding laboratory.

Simulates spatially confounded covariates, fits non-spatial, spatial and
adjusted spatial analysis models, evaluates closed-form bias expressions and
runs seeded replication studies.
"""
from ._backend import BACKEND
from .errors import (
    ConditioningError,
    ConfigError,
    ConvergenceError,
    DegeneracyError,
    DomainError,
    RankError,
    SamplerError,
    SpconfError,
    StructuralError,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConditioningError",
    "ConfigError",
    "ConvergenceError",
    "DegeneracyError",
    "DomainError",
    "RankError",
    "SamplerError",
    "SpconfError",
    "StructuralError",
]
