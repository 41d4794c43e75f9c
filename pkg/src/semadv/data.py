"""Desk-scale digit corpus in MNIST format.

Real MNIST is not bundled; the built-in corpus upsamples the scikit-learn
handwritten-digit images (8x8, ten classes) to 28x28 so every pipeline runs on
genuine digit shapes at the standard geometry.  ``load_dataset`` accepts
either the built-in name or a pair of IDX files, so swapping in actual MNIST
is a matter of pointing at its files.
"""

from __future__ import annotations

import numpy as np

from . import dataio

BUILTIN = "builtin:digits"


def resize_bilinear(images: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Resize (n, h, w) images with bilinear interpolation (half-pixel centers)."""
    images = np.asarray(images, dtype=np.float32)
    n, h, w = images.shape
    oh, ow = out_hw
    ys = (np.arange(oh) + 0.5) * h / oh - 0.5
    xs = (np.arange(ow) + 0.5) * w / ow - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0).astype(np.float32)
    fx = np.clip(xs - x0, 0.0, 1.0).astype(np.float32)
    a = images[:, y0][:, :, x0]
    b = images[:, y0][:, :, x1]
    c = images[:, y1][:, :, x0]
    d = images[:, y1][:, :, x1]
    fy = fy[None, :, None]
    fx = fx[None, None, :]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)


def digits_dataset() -> tuple[np.ndarray, np.ndarray]:
    """All 1797 scikit-learn digits as (n, 1, 28, 28) float32 in [0, 1]."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    imgs = resize_bilinear(raw.images / 16.0, (28, 28))
    imgs = np.clip(imgs, 0.0, 1.0)[:, None]
    return imgs.astype(np.float32), raw.target.astype(np.int64)


def load_dataset(images="builtin:digits", labels=None) -> tuple[np.ndarray, np.ndarray]:
    """Built-in corpus, or a pair of IDX files."""
    if images == BUILTIN:
        return digits_dataset()
    if labels is None:
        raise ValueError("an IDX dataset needs both an image file and a label file")
    return dataio.load_idx_pair(images, labels)


def train_test_split(X, y, *, test_fraction: float = 0.2, seed: int = 0):
    """Deterministic shuffled split."""
    n = X.shape[0]
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(n * (1.0 - test_fraction)))
    tr, te = order[:cut], order[cut:]
    return X[tr], y[tr], X[te], y[te]


def augmented_training_set(X, y, family, copies: int, seed: int = 0):
    """Originals plus ``copies`` independently transformed copies of each image."""
    from .augment import augment

    if copies < 1:
        return X, y
    rng = np.random.default_rng(seed)
    extra = []
    for img in X:
        extra.append(augment(img, copies, family, rng))
    Xa = np.concatenate([X] + [np.concatenate(extra)]) if extra else X
    ya = np.concatenate([y] + [np.repeat(y, copies)])
    return Xa.astype(np.float32), ya


def class_exemplars(X, y, *, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One image per class, classes in ascending order."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        images.append(X[rng.choice(idx)])
        labels.append(c)
    return np.stack(images), np.asarray(labels)
