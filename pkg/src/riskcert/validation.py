"""Small input validation helpers used across the package."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, DomainError


def as_float_vector(x, name: str = "x") -> np.ndarray:
    """Coerce to a 1-D float64 array; reject anything else."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def as_float_matrix(x, name: str = "X") -> np.ndarray:
    """Coerce to a 2-D float64 array; reject anything else."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def as_label_vector(y, name: str = "y") -> np.ndarray:
    """Coerce to a 1-D integer array of non-negative class indices."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        rounded = np.asarray(arr, dtype=float)
        if not np.all(np.isfinite(rounded)) or np.any(rounded != np.round(rounded)):
            raise DomainError(f"{name} must contain integer class indices")
        arr = rounded.astype(int)
    arr = arr.astype(int, copy=False)
    if arr.size and arr.min() < 0:
        raise DomainError(f"{name} must contain non-negative class indices")
    return arr


def check_same_length(a, b, name_a: str, name_b: str) -> None:
    if len(a) != len(b):
        raise DimensionMismatch(
            f"{name_a} and {name_b} must have the same length "
            f"({len(a)} != {len(b)})"
        )


def check_in_range(value: float, lo: float, hi: float, name: str,
                   error=DomainError) -> float:
    value = float(value)
    if not (lo <= value <= hi) or not np.isfinite(value):
        raise error(f"{name} must lie in [{lo}, {hi}], got {value}")
    return value


def check_positive(value: float, name: str, error=DomainError) -> float:
    value = float(value)
    if not (value > 0) or not np.isfinite(value):
        raise error(f"{name} must be strictly positive, got {value}")
    return value
