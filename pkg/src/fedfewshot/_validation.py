import numpy as np

from .errors import DataError, NonFiniteInput


def check_image_batch(X, name="X"):
    """Coerce to a finite float32 array of shape (n, coeffs, frames)."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 4 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 3:
        raise DataError(f"{name} must have shape (n, coeffs, frames), got {X.shape}")
    if X.shape[0] == 0:
        raise DataError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput(f"{name} contains NaN or Inf")
    return X


def check_labels(y, n, name="y"):
    y = np.asarray(y, dtype=object).reshape(-1)
    if y.shape[0] != n:
        raise DataError(f"{name} has {y.shape[0]} entries, expected {n}")
    return y


def check_waveforms(X, name="X"):
    """A list of 1-D finite sample arrays (ragged lengths allowed)."""
    if isinstance(X, np.ndarray) and X.ndim == 1 and X.dtype != object:
        X = [X]
    out = []
    for i, x in enumerate(X):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise DataError(f"{name}[{i}] must be a non-empty 1-D waveform")
        out.append(x)
    if not out:
        raise DataError(f"{name} is empty")
    return out
