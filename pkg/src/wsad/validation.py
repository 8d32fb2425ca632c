"""Input validation helpers shared by the functional core and the estimators."""

from __future__ import annotations

import numpy as np

__all__ = ["check_feature_map", "check_patch_matrix", "check_vector"]


def check_feature_map(arr, name: str = "feature map") -> np.ndarray:
    """Validate and return a dense (height, width, channels) float32 array.

    Accepts anything array-like; rejects wrong rank, empty axes and
    non-finite values.
    """
    out = np.asarray(arr, dtype=np.float32)
    if out.ndim != 3:
        raise ValueError(f"{name} must have shape (height, width, channels), got {out.shape}")
    if min(out.shape) < 1:
        raise ValueError(f"{name} has a zero-sized axis: {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite values")
    return out


def check_patch_matrix(X, n_channels: int | None = None, name: str = "feature matrix") -> np.ndarray:
    """Validate a (rows, channels) float32 matrix of patch features."""
    out = np.asarray(X, dtype=np.float32)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D (rows, channels), got shape {out.shape}")
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {out.shape}")
    if n_channels is not None and out.shape[1] != n_channels:
        raise ValueError(
            f"{name} has {out.shape[1]} channels, expected {n_channels}"
        )
    return out


def check_vector(v, length: int | None = None, name: str = "vector") -> np.ndarray:
    """Validate a 1-D float32 vector, optionally of fixed length."""
    out = np.asarray(v, dtype=np.float32)
    if out.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {out.shape}")
    if length is not None and out.shape[0] != length:
        raise ValueError(f"{name} has length {out.shape[0]}, expected {length}")
    return out
