"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_epochs(X, epoch_shape=None, name: str = "X") -> np.ndarray:
    """Return ``X`` as a finite float32 ``(N, C, L)`` array."""
    X = np.asarray(X)
    if X.dtype.kind not in "fiu":
        raise TypeError(f"{name} must be numeric, got dtype {X.dtype}")
    if X.ndim != 3:
        raise ValueError(f"{name} must have shape (n_epochs, channels, time), got {X.shape}")
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    if epoch_shape is not None and tuple(X.shape[1:]) != tuple(epoch_shape):
        raise ValueError(f"{name} epochs have shape {X.shape[1:]}, expected {tuple(epoch_shape)}")
    X = np.ascontiguousarray(X, dtype=np.float32)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinity")
    return X


def check_binary_labels(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y).reshape(-1)
    if n is not None and len(y) != n:
        raise ValueError(f"got {len(y)} labels for {n} epochs")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be binary (0/1)")
    return y.astype(np.int64)


def check_epochs_labels(X, y, epoch_shape=None):
    X = check_epochs(X, epoch_shape)
    return X, check_binary_labels(y, len(X))
