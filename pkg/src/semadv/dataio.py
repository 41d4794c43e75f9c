"""Binary file formats: IDX datasets, tensor files, checkpoints.

Tensor files ("SAET") are fixed little-endian regardless of host byte order so
golden files are portable: magic, u32 version, u8 dtype code (0 = float32,
1 = float64), u32 rank, rank x u64 dims, then the row-major payload.
Checkpoints are stored-zip archives of one tensor file per parameter plus an
ordered manifest.  IDX follows the classic big-endian layout (magic
0x00000803 for images, 0x00000801 for labels).
"""

from __future__ import annotations

import io
import json
import struct
import zipfile

import numpy as np

SAET_MAGIC = b"SAET"
SAET_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    """Malformed or truncated binary file."""


class VersionError(FormatError):
    pass


class DtypeError(FormatError):
    pass


class CheckpointMismatchError(ValueError):
    pass


# -- tensor files -------------------------------------------------------------


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = _CODE_FOR_KIND.get(arr.dtype.newbyteorder("="))
    if code is None:
        code = _CODE_FOR_KIND.get(np.dtype(arr.dtype.type))
    if code is None:
        raise DtypeError(f"tensor files hold float32/float64 only, got {arr.dtype}")
    le = arr.astype(_DTYPE_CODES[code], copy=False)
    head = SAET_MAGIC + struct.pack("<IBI", SAET_VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    return head + dims + le.tobytes(order="C")


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 13:
        raise FormatError(f"tensor file truncated: {len(buf)} bytes is shorter than the header")
    if buf[:4] != SAET_MAGIC:
        raise FormatError(f"bad tensor-file magic {buf[:4]!r}")
    version, code, rank = struct.unpack_from("<IBI", buf, 4)
    if version != SAET_VERSION:
        raise VersionError(f"unsupported tensor-file version {version}")
    if code not in _DTYPE_CODES:
        raise DtypeError(f"unknown dtype code {code}")
    off = 13
    if len(buf) < off + 8 * rank:
        raise FormatError("tensor file truncated inside the dims block")
    dims = struct.unpack_from(f"<{rank}Q", buf, off) if rank else ()
    off += 8 * rank
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = off + count * dtype.itemsize
    if len(buf) != expected:
        raise FormatError(f"tensor payload mismatch: expected {expected} bytes, got {len(buf)}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


# -- checkpoints ---------------------------------------------------------------


def _param_array(value) -> np.ndarray:
    data = getattr(value, "data", value)
    return np.asarray(data)


def save_checkpoint(path, params: dict) -> None:
    """Write an ordered name -> tensor archive with a manifest."""
    manifest = []
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for i, (name, value) in enumerate(params.items()):
            arr = _param_array(value)
            entry = f"{i:04d}.saet"
            manifest.append({"name": name, "entry": entry,
                             "shape": list(arr.shape), "dtype": arr.dtype.name})
            info = zipfile.ZipInfo(entry, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, tensor_to_bytes(arr))
        info = zipfile.ZipInfo("manifest.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(manifest, indent=1))


def load_checkpoint(path, template: dict | None = None) -> dict:
    """Read a checkpoint; with a template, verify names and shapes in order."""
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        out = {}
        for item in manifest:
            out[item["name"]] = tensor_from_bytes(zf.read(item["entry"]))
    if template is not None:
        for name, value in template.items():
            want = _param_array(value).shape
            if name not in out:
                raise CheckpointMismatchError(f"checkpoint is missing parameter '{name}'")
            got = out[name].shape
            if tuple(got) != tuple(want):
                raise CheckpointMismatchError(
                    f"parameter '{name}': checkpoint shape {got} does not match {want}")
        extra = [n for n in out if n not in template]
        if extra:
            raise CheckpointMismatchError(f"checkpoint has unexpected parameter '{extra[0]}'")
    return out


def load_params(path, template: dict) -> dict:
    """Load a checkpoint into fresh Tensors shaped like the template network."""
    from .tensor import Tensor

    raw = load_checkpoint(path, template)
    return {k: Tensor(raw[k].astype(_param_array(v).dtype, copy=False), requires_grad=True)
            for k, v in template.items()}


# -- IDX -----------------------------------------------------------------------


def load_idx(path) -> np.ndarray:
    """Read one IDX file: images scaled to [0, 1] as (n, 1, h, w), or labels."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4:
        raise FormatError("idx file truncated: missing magic")
    magic = struct.unpack_from(">I", buf, 0)[0]
    if magic == IDX_IMAGES_MAGIC:
        if len(buf) < 16:
            raise FormatError("idx image file truncated inside the header")
        n, h, w = struct.unpack_from(">III", buf, 4)
        expected = 16 + n * h * w
        if len(buf) != expected:
            raise FormatError(f"idx image payload mismatch: expected {expected} bytes, got {len(buf)}")
        raw = np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(n, 1, h, w)
        return raw.astype(np.float32) / np.float32(255.0)
    if magic == IDX_LABELS_MAGIC:
        if len(buf) < 8:
            raise FormatError("idx label file truncated inside the header")
        n = struct.unpack_from(">I", buf, 4)[0]
        expected = 8 + n
        if len(buf) != expected:
            raise FormatError(f"idx label payload mismatch: expected {expected} bytes, got {len(buf)}")
        return np.frombuffer(buf, dtype=np.uint8, offset=8).astype(np.int64)
    raise FormatError(f"bad idx magic 0x{magic:08x}")


def load_idx_pair(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 4:
        raise FormatError(f"{images_path} is not an idx image file")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path} is not an idx label file")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"image/label count mismatch: {images.shape[0]} vs {labels.shape[0]}")
    return images, labels


def save_idx_images(path, images: np.ndarray) -> None:
    """Write [0, 1] images as uint8 IDX (rounding to the nearest level)."""
    images = np.asarray(images)
    if images.ndim == 4:
        images = images[:, 0]
    n, h, w = images.shape
    raw = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(raw.tobytes(order="C"))


def save_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes(order="C"))
