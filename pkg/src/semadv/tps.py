"""Thin-plate-spline fitting and image warping.

The spline minimizes bending energy subject to interpolating paired control
points; its radial part uses U(r) = r^2 log r with U(0) = 0.  Images are
resampled by backward warping: the spline is fitted from output-pixel
coordinates to source coordinates and sampled bilinearly, so no holes appear.
All math is float64; fitting a 25-point grid is a dense pivoted solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TPSFitError(ValueError):
    """Raised when the interpolation system is singular."""


def control_lattice(h: int, w: int, n: int = 5) -> np.ndarray:
    """A regular n x n grid of (x, y) control points spanning the image."""
    xs = np.linspace(0.0, w - 1.0, n)
    ys = np.linspace(0.0, h - 1.0, n)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _radial(d2: np.ndarray) -> np.ndarray:
    # U(r) = r^2 log r = 0.5 * d2 * log(d2), with U(0) = 0
    out = np.zeros_like(d2)
    nz = d2 > 0
    out[nz] = 0.5 * d2[nz] * np.log(d2[nz])
    return out


@dataclass(frozen=True)
class TPSParams:
    """Fitted spline: radial weights per control point plus an affine part.

    ``map_points`` sends query points through  a^T [1, x, y] + sum_i w_i U(|p - src_i|).
    """

    src: np.ndarray  # (m, 2) control points the radial basis is centered on
    w: np.ndarray    # (m, 2) radial weights
    a: np.ndarray    # (3, 2) affine coefficients, rows are [const, x, y]

    @classmethod
    def identity(cls, src: np.ndarray) -> "TPSParams":
        src = np.asarray(src, dtype=np.float64)
        a = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        return cls(src=src, w=np.zeros_like(src), a=a)

    def map_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        d2 = ((pts[:, None, :] - self.src[None, :, :]) ** 2).sum(axis=2)
        u = _radial(d2)
        ones = np.ones((pts.shape[0], 1))
        p = np.concatenate([ones, pts], axis=1)
        return p @ self.a + u @ self.w


def tps_fit(src: np.ndarray, dst: np.ndarray, lam: float = 0.0) -> TPSParams:
    """Fit the spline sending ``src`` control points to ``dst``.

    With lam = 0 the fitted map interpolates every pair exactly; lam > 0
    trades interpolation error for smoothness (K + lam*I in the system).
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape:
        raise ValueError(f"tps_fit: expected matching (m, 2) point arrays, "
                         f"got {src.shape} and {dst.shape}")
    if lam < 0:
        raise ValueError("tps_fit: regularization must be >= 0")
    m = src.shape[0]
    d2 = ((src[:, None, :] - src[None, :, :]) ** 2).sum(axis=2)
    off = ~np.eye(m, dtype=bool)
    if np.any(d2[off] == 0.0):
        raise TPSFitError("tps_fit: duplicate source control points")
    k = _radial(d2) + lam * np.eye(m)
    p = np.concatenate([np.ones((m, 1)), src], axis=1)
    sys = np.zeros((m + 3, m + 3))
    sys[:m, :m] = k
    sys[:m, m:] = p
    sys[m:, :m] = p.T
    rhs = np.zeros((m + 3, 2))
    rhs[:m] = dst
    try:
        sol = np.linalg.solve(sys, rhs)
    except np.linalg.LinAlgError as e:
        raise TPSFitError(
            "tps_fit: singular system (degenerate control grid); try lam > 0") from e
    return TPSParams(src=src, w=sol[:m], a=sol[m:])


def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray,
                    fill: float | str = 0.0) -> np.ndarray:
    """Sample (c, h, w) image at fractional (x, y); out of bounds reads
    return ``fill``, or clamp to the border when fill == "edge"."""
    c, h, w = img.shape
    xs = np.clip(x, 0.0, w - 1.0)
    ys = np.clip(y, 0.0, h - 1.0)
    if fill == "edge":
        inside = np.ones_like(x, dtype=bool)
    else:
        # tolerate float jitter at the frame edge before declaring out-of-bounds
        eps = 1e-6
        inside = (x >= -eps) & (x <= w - 1 + eps) & (y >= -eps) & (y <= h - 1 + eps)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0).astype(img.dtype)
    fy = (ys - y0).astype(img.dtype)
    out = np.empty((c,) + x.shape, dtype=img.dtype)
    for ch in range(c):
        plane = img[ch]
        v = (plane[y0, x0] * (1 - fy) * (1 - fx)
             + plane[y0, x1] * (1 - fy) * fx
             + plane[y1, x0] * fy * (1 - fx)
             + plane[y1, x1] * fy * fx)
        if fill != "edge":
            v = np.where(inside, v, img.dtype.type(fill))
        out[ch] = v
    return out


def _pixel_grid(h: int, w: int) -> np.ndarray:
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def tps_apply(img: np.ndarray, params: TPSParams, fill: float | str = 0.0) -> np.ndarray:
    """Backward-warp an image through a fitted spline.

    ``params`` must map output-pixel coordinates to source coordinates
    (i.e. fitted with the *target* grid as src and the *source* grid as dst).
    Accepts (h, w) or (c, h, w); preserves shape and the [0, 1] range.
    """
    img = np.asarray(img)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    c, h, w = img.shape
    pts = params.map_points(_pixel_grid(h, w))
    x = pts[:, 0].reshape(h, w)
    y = pts[:, 1].reshape(h, w)
    out = bilinear_sample(img, x, y, fill=fill)
    return out[0] if squeeze else out


def warp_image(img: np.ndarray, src_pts: np.ndarray, dst_pts: np.ndarray,
               lam: float = 0.0, fill: float | str = 0.0) -> np.ndarray:
    """Warp so that content at ``src_pts`` lands at ``dst_pts``.

    Fits the inverse (dst -> src) spline, then backward-samples.
    """
    return tps_apply(img, tps_fit(dst_pts, src_pts, lam=lam), fill=fill)
