"""Quantized dot-product kernels and performance model for a coarse-grained linear array."""

from qcgla.errors import (
    ConfigError,
    InvalidInput,
    InvalidOperand,
    Overflow24,
    QcglaError,
    ShapeError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "InvalidInput",
    "InvalidOperand",
    "Overflow24",
    "QcglaError",
    "ShapeError",
]
