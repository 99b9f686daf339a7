"""Simulation and stability certificates for evolution equations with delayed feedback."""

from .core import (
    BoundReport,
    DelaySystem,
    History,
    PowerNonlinearity,
    SemigroupEstimate,
    StabilityCertificate,
    Trajectory,
    validate_system,
)

__all__ = [
    "BoundReport",
    "DelaySystem",
    "History",
    "PowerNonlinearity",
    "SemigroupEstimate",
    "StabilityCertificate",
    "Trajectory",
    "validate_system",
]

__version__ = "0.1.0"
