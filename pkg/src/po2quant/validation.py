"""Input validation helpers used by the functional API."""

from __future__ import annotations

import math
from typing import Any

import numpy as np

from .errors import NonFiniteError, ValidationError


def as_float_tensor(x: Any, name: str = "tensor") -> np.ndarray:
    """Converts array-like input to a float64 ndarray without copying when possible."""
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} is not numeric array-like: {exc}") from exc
    return arr


def require_finite(arr: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite elements")
    return arr


def require_same_shape(a: np.ndarray, b: np.ndarray, a_name: str, b_name: str) -> None:
    if a.shape != b.shape:
        raise ValidationError(
            f"{a_name} shape {a.shape} does not match {b_name} shape {b.shape}"
        )


def require_nonempty(arr: np.ndarray, name: str = "tensor") -> np.ndarray:
    if arr.size == 0:
        raise ValidationError(f"{name} must be non-empty")
    return arr


def require_positive_scalar(x: float, name: str) -> float:
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise ValidationError(f"{name} must be a finite positive real, got {x!r}")
    return x


def require_nonnegative(arr: np.ndarray, name: str) -> np.ndarray:
    if np.any(arr < 0):
        raise ValidationError(f"{name} must be non-negative element-wise")
    return arr


def require_int(x: Any, name: str) -> int:
    if isinstance(x, bool) or int(x) != x:
        raise ValidationError(f"{name} must be an integer, got {x!r}")
    return int(x)
