"""Image and tensor file formats.

Raw tensor container (``.rten``), all integers unsigned little-endian::

    offset  size  field
    0       4     magic b"RTNS"
    4       4     format version (1)
    8       4     tensor count N
    then N records, each:
            2     name length L
            L     name, UTF-8
            4     rank R
            4*R   dimensions, outermost first
            4*P   payload, P = prod(dims) IEEE-754 float32 LE, row-major

PNG files are 8-bit RGB; mask stacks are 1-bit PNGs of shape ``(f*h, w)``
with frame ``i`` occupying rows ``i*h .. (i+1)*h - 1``.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError

MAGIC = b"RTNS"
CONTAINER_VERSION = 1


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb)
    if rgb.dtype == np.uint8:
        return rgb
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, rgb) -> None:
    Image.fromarray(to_uint8(rgb), mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Read an RGB PNG into unit-range float64."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise FormatError(f"cannot read PNG {path}: {exc}") from exc
    return arr / 255.0


def write_mask_png(path, masks) -> None:
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim == 2:
        masks = masks[None]
    f, h, w = masks.shape
    Image.fromarray(masks.reshape(f * h, w)).convert("1").save(path, format="PNG")


def read_mask_png(path, frames: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L")) > 0
    except (UnidentifiedImageError, OSError) as exc:
        raise FormatError(f"cannot read mask PNG {path}: {exc}") from exc
    if arr.shape[0] % frames:
        raise FormatError(f"mask height {arr.shape[0]} is not a multiple of {frames} frames")
    return arr.reshape(frames, arr.shape[0] // frames, arr.shape[1])


def dumps_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", CONTAINER_VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def loads_tensors(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise FormatError("bad magic; not a raw tensor container")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != CONTAINER_VERSION:
            raise FormatError(f"unsupported container version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            nbytes = 4 * size
            if pos + nbytes > len(data):
                raise FormatError(f"tensor {name!r} is truncated")
            out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims).copy()
            pos += nbytes
    except struct.error as exc:
        raise FormatError(f"truncated tensor container: {exc}") from exc
    if pos != len(data):
        raise FormatError("trailing bytes after last tensor")
    return out


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_tensors(tensors))


def load_tensors(path) -> dict[str, np.ndarray]:
    return loads_tensors(Path(path).read_bytes())


def save_tensor(path, arr) -> None:
    save_tensors(path, {"data": arr})


def load_tensor(path) -> np.ndarray:
    tensors = load_tensors(path)
    if "data" not in tensors:
        raise FormatError(f"{path} has no 'data' tensor")
    return tensors["data"]


def load_image(path) -> np.ndarray:
    """Load an RGB image from PNG or a raw tensor container; unit-range float64."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return read_png(path)
    arr = load_tensor(path).astype(np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"{path} does not hold an HxWx3 image")
    return arr
