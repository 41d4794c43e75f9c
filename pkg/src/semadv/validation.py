"""Input validation helpers shared by the estimator-style API."""

from __future__ import annotations

import numpy as np


def check_images(X, *, dtype=np.float32, name: str = "X") -> np.ndarray:
    """Coerce to a (n, 1, h, w) float batch in [0, 1].

    Accepts (n, c, h, w), (n, h, w) or a single (h, w)/(c, h, w) image.
    """
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None, None]
    elif X.ndim == 3:  # (n, h, w) grayscale batch
        X = X[:, None]
    elif X.ndim != 4:
        raise ValueError(f"{name}: expected image batch, got ndim={X.ndim}")
    X = X.astype(dtype, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name}: non-finite pixel values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"{name}: pixel values must lie in [0, 1], "
                         f"got range [{X.min():.4g}, {X.max():.4g}]")
    return X


def check_labels(y, n_classes: int, *, name: str = "y") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name}: expected 1-d label array, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        yi = y.astype(np.int64)
        if not np.array_equal(yi, y):
            raise ValueError(f"{name}: labels must be integers")
        y = yi
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"{name}: labels must lie in [0, {n_classes})")
    return y.astype(np.int64, copy=False)


def check_rng(seed) -> np.random.Generator:
    """Accept a seed or Generator, following numpy's default_rng convention."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
