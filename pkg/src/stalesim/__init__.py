"""Deterministic simulation of data-parallel training under bounded update staleness."""

from stalesim.delay import GeometricStraggler, UniformBounded
from stalesim.errors import (
    ConfigError,
    FormatError,
    InfeasibleMean,
    NonFiniteError,
    StalesimError,
)
from stalesim.optim import SGD, Adagrad, Adam, Momentum, RMSProp

__version__ = "0.1.0"

__all__ = [
    "Adagrad",
    "Adam",
    "ConfigError",
    "FormatError",
    "GeometricStraggler",
    "InfeasibleMean",
    "Momentum",
    "NonFiniteError",
    "RMSProp",
    "SGD",
    "StalesimError",
    "UniformBounded",
]
