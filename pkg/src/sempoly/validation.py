"""Input validation helpers for array-like observed data."""

from __future__ import annotations

import numpy as np


def check_data_matrix(X, *, expected_columns: int | None = None, min_rows: int = 2) -> np.ndarray:
    """Coerce X to a finite 2-D float64 matrix of cases by variables."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D data matrix, got ndim={arr.ndim}")
    if arr.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} cases, got {arr.shape[0]}")
    if expected_columns is not None and arr.shape[1] != expected_columns:
        raise ValueError(
            f"data has {arr.shape[1]} columns but the model declares {expected_columns} manifest variables"
        )
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise ValueError(
            f"data contains a non-finite value at row {bad[0] + 1}, column {bad[1] + 1}; "
            "missing data is not supported"
        )
    return arr
