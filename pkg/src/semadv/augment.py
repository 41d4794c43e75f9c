"""Semantics-preserving transformation families.

A family is a set of enabled transform kinds with sampling ranges; drawing
from it yields one spec per enabled kind, applied in a fixed order: geometric
(scale, rotate, crop), then thin-plate-spline jitter, then photometric
(brightness, hue).  The stock MNIST-style family combines TPS, scaling,
rotation and cropping; the photometric kinds exist for color datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tps
from .validation import check_rng

KINDS = ("scale", "rotate", "crop", "tps", "brightness", "hue")


@dataclass(frozen=True)
class TransformSpec:
    """One sampled transform: its kind plus kind-specific parameters."""

    kind: str
    factor: float = 1.0          # scale
    degrees: float = 0.0         # rotate
    dx: int = 0                  # crop shift, pixels
    dy: int = 0
    offsets: np.ndarray | None = None  # tps, (m, 2) control-point jitter
    delta: float = 0.0           # brightness / hue shift

    def is_identity(self) -> bool:
        if self.kind == "scale":
            return self.factor == 1.0
        if self.kind == "rotate":
            return self.degrees == 0.0
        if self.kind == "crop":
            return self.dx == 0 and self.dy == 0
        if self.kind == "tps":
            return self.offsets is None or not np.any(self.offsets)
        return self.delta == 0.0


@dataclass(frozen=True)
class TransformFamily:
    """Enabled transform kinds and their sampling ranges."""

    kinds: tuple[str, ...]
    tps_sigma: float = 2.0
    grid: int = 5
    scale_range: tuple[float, float] = (0.85, 1.15)
    rotate_degrees: float = 15.0
    crop_px: int = 2
    brightness_delta: float = 0.2
    hue_delta: float = 0.1
    fill: float | str = 0.0

    def __post_init__(self):
        for k in self.kinds:
            if k not in KINDS:
                raise ValueError(f"unknown transform kind '{k}'")

    @classmethod
    def mnist(cls, tps_sigma: float = 2.0) -> "TransformFamily":
        return cls(kinds=("scale", "rotate", "crop", "tps"), tps_sigma=tps_sigma)

    @classmethod
    def photometric(cls, tps_sigma: float = 2.0) -> "TransformFamily":
        return cls(kinds=("tps", "brightness", "hue"), tps_sigma=tps_sigma, fill="edge")

    @classmethod
    def identity(cls) -> "TransformFamily":
        return cls(kinds=("tps",), tps_sigma=0.0)

    def with_sigma(self, tps_sigma: float) -> "TransformFamily":
        return replace(self, tps_sigma=tps_sigma)


def sample_transform(family: TransformFamily, rng) -> list[TransformSpec]:
    """Draw one spec per enabled kind, in the fixed application order."""
    if not family.kinds:
        raise ValueError("sample_transform: empty transform family")
    rng = check_rng(rng)
    specs = []
    for kind in KINDS:  # canonical order, independent of family.kinds order
        if kind not in family.kinds:
            continue
        if kind == "scale":
            lo, hi = family.scale_range
            specs.append(TransformSpec(kind, factor=float(rng.uniform(lo, hi))))
        elif kind == "rotate":
            d = family.rotate_degrees
            specs.append(TransformSpec(kind, degrees=float(rng.uniform(-d, d))))
        elif kind == "crop":
            c = family.crop_px
            specs.append(TransformSpec(kind, dx=int(rng.integers(-c, c + 1)),
                                       dy=int(rng.integers(-c, c + 1))))
        elif kind == "tps":
            m = family.grid * family.grid
            off = rng.normal(0.0, family.tps_sigma, size=(m, 2)) if family.tps_sigma > 0 \
                else np.zeros((m, 2))
            specs.append(TransformSpec(kind, offsets=off))
        elif kind == "brightness":
            d = family.brightness_delta
            specs.append(TransformSpec(kind, delta=float(rng.uniform(-d, d))))
        elif kind == "hue":
            d = family.hue_delta
            specs.append(TransformSpec(kind, delta=float(rng.uniform(-d, d))))
    return specs


def _affine_backward_map(img: np.ndarray, inv, fill) -> np.ndarray:
    c, h, w = img.shape
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    sx, sy = inv(gx, gy)
    return tps.bilinear_sample(img, sx, sy, fill=fill)


def _apply_scale(img, factor, fill):
    c, h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0

    def inv(gx, gy):
        return cx + (gx - cx) / factor, cy + (gy - cy) / factor

    return _affine_backward_map(img, inv, fill)


def _apply_rotate(img, degrees, fill):
    c, h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    t = np.deg2rad(degrees)
    ct, st = np.cos(t), np.sin(t)

    def inv(gx, gy):
        ux, uy = gx - cx, gy - cy
        return cx + ct * ux + st * uy, cy - st * ux + ct * uy

    return _affine_backward_map(img, inv, fill)


def _apply_crop(img, dx, dy, fill):
    # integer crop-and-repad == translation with fill: out(y, x) = img(y+dy, x+dx)
    c, h, w = img.shape
    ys = np.arange(h) + dy
    xs = np.arange(w) + dx
    ysc = np.clip(ys, 0, h - 1)
    xsc = np.clip(xs, 0, w - 1)
    out = img[:, ysc[:, None], xsc[None, :]]
    if fill != "edge":
        out = out.copy()
        out[:, (ys < 0) | (ys >= h), :] = img.dtype.type(fill)
        out[:, :, (xs < 0) | (xs >= w)] = img.dtype.type(fill)
    return out


def _apply_tps(img, offsets, grid, fill):
    c, h, w = img.shape
    src = tps.control_lattice(h, w, grid)
    dst = src + offsets
    return tps.warp_image(img, src, dst, fill=fill)


def _rgb_to_hsv(img):
    r, g, b = img[0], img[1], img[2]
    mx = np.max(img, axis=0)
    mn = np.min(img, axis=0)
    d = mx - mn
    h = np.zeros_like(mx)
    nz = d > 0
    rm = nz & (mx == r)
    gm = nz & (mx == g) & ~rm
    bm = nz & ~rm & ~gm
    h[rm] = ((g - b)[rm] / d[rm]) % 6.0
    h[gm] = (b - r)[gm] / d[gm] + 2.0
    h[bm] = (r - g)[bm] / d[bm] + 4.0
    h /= 6.0
    s = np.where(mx > 0, d / np.maximum(mx, 1e-12), 0.0)
    return np.stack([h, s, mx])


def _hsv_to_rgb(hsv):
    h, s, v = hsv[0] * 6.0, hsv[1], hsv[2]
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def _apply_brightness(img, delta):
    return np.clip(img + img.dtype.type(delta), 0.0, 1.0)


def _apply_hue(img, delta):
    if img.shape[0] != 3:
        return img  # hue of an achromatic image is the image itself
    hsv = _rgb_to_hsv(img.astype(np.float64))
    hsv[0] = (hsv[0] + delta) % 1.0
    return np.clip(_hsv_to_rgb(hsv), 0.0, 1.0).astype(img.dtype)


def apply_transform(img: np.ndarray, spec: TransformSpec, *, grid: int = 5,
                    fill: float | str = 0.0) -> np.ndarray:
    """Apply one transform spec to a (c, h, w) or (h, w) image in [0, 1]."""
    img = np.asarray(img)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    if spec.is_identity():
        out = img
    elif spec.kind == "scale":
        out = _apply_scale(img, spec.factor, fill)
    elif spec.kind == "rotate":
        out = _apply_rotate(img, spec.degrees, fill)
    elif spec.kind == "crop":
        out = _apply_crop(img, spec.dx, spec.dy, fill)
    elif spec.kind == "tps":
        out = _apply_tps(img, spec.offsets, grid, fill)
    elif spec.kind == "brightness":
        out = _apply_brightness(img, spec.delta)
    elif spec.kind == "hue":
        out = _apply_hue(img, spec.delta)
    else:
        raise ValueError(f"unknown transform kind '{spec.kind}'")
    out = np.clip(out, 0.0, 1.0)
    return out[0] if squeeze else out


def apply_plan(img: np.ndarray, specs: list[TransformSpec], *, grid: int = 5,
               fill: float | str = 0.0) -> np.ndarray:
    for spec in specs:
        img = apply_transform(img, spec, grid=grid, fill=fill)
    return img


def augment(x_ori: np.ndarray, count: int, family: TransformFamily, rng) -> np.ndarray:
    """Stack ``count`` independent draws t_i(x_ori) from the family.

    Input (1, h, w), (c, h, w) or (h, w); output has a leading sample axis
    and stays inside [0, 1].
    """
    rng = check_rng(rng)
    x_ori = np.asarray(x_ori)
    out = []
    for _ in range(count):
        specs = sample_transform(family, rng)
        out.append(apply_plan(x_ori, specs, grid=family.grid, fill=family.fill))
    return np.stack(out) if out else np.empty((0,) + x_ori.shape, dtype=x_ori.dtype)
