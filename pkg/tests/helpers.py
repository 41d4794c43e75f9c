"""Shared test utilities: independent finite-difference oracles."""

from __future__ import annotations

import numpy as np


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max |a-b| scaled by the larger of 1 and the largest entry magnitude."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / denom


def fd_gradient(f, x: np.ndarray, h: float = 1e-6, coords=None) -> np.ndarray:
    """Central finite differences of a scalar function at x (float64).

    ``coords`` restricts the estimate to a subset of flat indices; other
    entries of the returned array are NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    if coords is None:
        coords = range(flat.size)
        out = np.zeros_like(flat)
    else:
        out = np.full_like(flat, np.nan)
    for i in coords:
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return out.reshape(x.shape)


def conv2d_reference(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                     stride: int, pad: int) -> np.ndarray:
    """Brute-force loop convolution used as an independent oracle."""
    bs, c, h, wd = x.shape
    f, _, k, _ = w.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((bs, f, oh, ow), dtype=x.dtype)
    for n in range(bs):
        for fi in range(f):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[n, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[n, fi, i, j] = np.sum(patch * w[fi]) + b[fi]
    return out


def margin_away_from(x: np.ndarray, level: float = 0.0, margin: float = 1e-3) -> np.ndarray:
    """Push entries within ``margin`` of a kink level away from it.

    Finite differences are only valid where the function is differentiable,
    so kinked-op gradient checks probe points with a safety margin.
    """
    x = x.copy()
    close = np.abs(x - level) < margin
    x[close] = level + margin * np.where(x[close] >= level, 1.0, -1.0) * 2.0
    return x
