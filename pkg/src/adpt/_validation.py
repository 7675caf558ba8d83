"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np

from .exceptions import DimMismatch, ZeroVector


def check_texts(X) -> list[str]:
    """Coerce X (list, tuple, 1-d array, pandas Series) to a list of str."""
    if isinstance(X, str):
        raise TypeError("expected a sequence of texts, got a single string")
    arr = np.asarray(list(X), dtype=object)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d sequence of texts, got shape {arr.shape}")
    out = []
    for i, item in enumerate(arr):
        if not isinstance(item, str):
            raise TypeError(f"item {i} is {type(item).__name__}, expected str")
        out.append(item)
    return out


def check_vector(v, *, name="vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValueError(f"{name} must have at least 2 dimensions")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = check_vector(a, name="a")
    b = check_vector(b, name="b")
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if not a.any() or not b.any():
        raise ZeroVector("cosine is undefined for a zero vector")
    return a, b
