"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .model import CountMatrix


def check_counts(X, sample_ids=None, taxon_ids=None) -> CountMatrix:
    """Coerce ``X`` (CountMatrix, array-like or DataFrame) to a CountMatrix."""
    if isinstance(X, CountMatrix):
        return X
    if hasattr(X, "columns") and hasattr(X, "index"):
        taxon_ids = taxon_ids if taxon_ids is not None else [str(c) for c in X.columns]
        sample_ids = sample_ids if sample_ids is not None else [str(i) for i in X.index]
        X = X.to_numpy()
    arr = np.asarray(X)
    if arr.dtype == object:
        try:
            arr = arr.astype(float)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"counts must be numeric: {exc}") from None
    if arr.dtype.kind not in "biuf":
        raise ValueError(f"counts must be numeric, got dtype {arr.dtype}")
    return CountMatrix(arr, tuple(sample_ids or ()), tuple(taxon_ids or ()))


def check_positive_int(name: str, value, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_seed(value) -> int:
    if value is None:
        return 0
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {value!r}")
    if not 0 <= value < 2**64:
        raise ValueError(f"seed must lie in [0, 2**64), got {value}")
    return int(value)
