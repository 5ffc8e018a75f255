"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_lengths(X, name: str = "X") -> np.ndarray:
    """Coerce request lengths to a 1-D float array of positive finite values.

    Accepts a flat sequence or a single-column 2-D array.
    """
    arr = check_array(X, ensure_2d=False, dtype=np.float64, input_name=name)
    if arr.ndim == 2:
        if arr.shape[1] != 1:
            raise ValueError(f"{name} must have a single column of lengths, got shape {arr.shape}")
        arr = arr[:, 0]
    if np.any(arr <= 0):
        raise ValueError(f"{name} must contain positive lengths")
    return arr


def check_positive(value, name: str, allow_zero: bool = False) -> float:
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    if allow_zero and value < 0 or not allow_zero and value <= 0:
        raise ValueError(f"{name} must be {'>= 0' if allow_zero else '> 0'}, got {value}")
    return float(value)


def check_count(value, name: str, minimum: int = 0) -> int:
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)
