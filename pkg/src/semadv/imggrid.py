"""Image-grid emission with per-cell deception borders.

Tiles go row-major, upscaled by nearest neighbor for legibility, each framed
by a 1-px border: green for a successful deception, red otherwise.  PPM (P6)
output needs nothing beyond the standard library; PNG is used when Pillow is
importable, otherwise the writer falls back to PPM next to the requested
path.
"""

from __future__ import annotations

import os

import numpy as np

GREEN = (0, 190, 60)
RED = (210, 40, 40)


def _to_gray_batch(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim == 4:
        images = images[:, 0]
    if images.ndim != 3:
        raise ValueError(f"emit_grid: expected (n, h, w) images, got shape {images.shape}")
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ValueError("emit_grid: images must lie in [0, 1]")
    return images


def render_grid(images: np.ndarray, cols: int, border_flags, scale: int = 4) -> np.ndarray:
    """RGB uint8 canvas of bordered, upscaled tiles."""
    images = _to_gray_batch(images)
    n, h, w = images.shape
    flags = list(border_flags) if border_flags is not None else [False] * n
    if len(flags) != n:
        raise ValueError("emit_grid: one border flag per image required")
    rows = (n + cols - 1) // cols
    ch, cw = h * scale + 2, w * scale + 2
    canvas = np.zeros((rows * ch, cols * cw, 3), dtype=np.uint8)
    for i, (img, ok) in enumerate(zip(images, flags)):
        up = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
        tile = np.empty((ch, cw, 3), dtype=np.uint8)
        tile[:, :] = GREEN if ok else RED
        gray = np.clip(np.rint(up * 255.0), 0, 255).astype(np.uint8)
        tile[1:-1, 1:-1] = gray[:, :, None]
        r, c = divmod(i, cols)
        canvas[r * ch:(r + 1) * ch, c * cw:(c + 1) * cw] = tile
    return canvas


def write_ppm(path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes(order="C"))


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"{path} is not a binary PPM file")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3).reshape(h, w, 3)


def emit_grid(images, cols: int, border_flags, path, scale: int = 4) -> str:
    """Write the grid image; returns the path actually written (PNG when the
    extension asks for it and Pillow is present, PPM otherwise)."""
    rgb = render_grid(images, cols, border_flags, scale=scale)
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        try:
            from PIL import Image
        except ImportError:
            path = path[:-4] + ".ppm"
        else:
            Image.fromarray(rgb).save(path)
            return path
    if not path.lower().endswith(".ppm"):
        path = path + ".ppm"
    write_ppm(path, rgb)
    return path
