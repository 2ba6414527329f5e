"""Input validation helpers used by the estimator API and the data layer."""

import numpy as np

from .errors import NumericsError, ShapeError


def as_float_matrix(x, name: str = "x", n_cols: int | None = None, dtype=np.float32) -> np.ndarray:
    """Coerce to a 2-D C-contiguous float matrix, checking rank and width."""
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={arr.ndim}")
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if n_cols is not None and arr.shape[1] != n_cols:
        raise ShapeError(f"{name} must have {n_cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{name} contains non-finite entries")
    return arr


def as_label_vector(y, name: str = "y", n_rows: int | None = None) -> np.ndarray:
    """Coerce to a 1-D int64 vector of positive class ids."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got ndim={arr.ndim}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        flo = np.asarray(arr, dtype=np.float64)
        if not np.all(flo == np.round(flo)):
            raise ShapeError(f"{name} must contain integer class ids")
    arr = arr.astype(np.int64)
    if n_rows is not None and arr.shape[0] != n_rows:
        raise ShapeError(f"{name} must have {n_rows} entries, got {arr.shape[0]}")
    if arr.size and arr.min() < 1:
        raise ShapeError(f"{name} must use 1-based class ids, got min={arr.min()}")
    return arr


def require_finite(arr: np.ndarray, name: str) -> np.ndarray:
    """Raise NumericsError if any entry is nan or inf."""
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {name}")
    return arr
