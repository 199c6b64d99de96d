"""MSAT binary tensor records and named checkpoints.

Record layout (little endian)::

    b"MSAT" | version u16 = 1 | dtype u8 (0 = float32) | rank u8 |
    rank x u32 extents | row-major payload

A checkpoint is a sequence of ``(name length u16, utf-8 name, record)``.
"""
from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"MSAT"
VERSION = 1
DTYPES = {0: np.dtype("<f4")}
_CODES = {np.dtype("<f4"): 0}


class MSATError(ValueError):
    """Malformed or unreadable MSAT data."""


def _describe(source) -> str:
    return getattr(source, "name", None) or "<stream>"


def write_tensor(fh: BinaryIO, array) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    if arr.ndim > 255:
        raise MSATError(f"rank {arr.ndim} exceeds 255")
    fh.write(MAGIC)
    fh.write(struct.pack("<HBB", VERSION, 0, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise MSATError(f"{_describe(fh)}: truncated {what} (wanted {n} bytes, got {len(buf)})")
    return buf


def read_header(fh: BinaryIO) -> tuple[int, ...]:
    """Consume a record header and return the tensor shape."""
    magic = _read_exact(fh, 4, "header")
    if magic != MAGIC:
        raise MSATError(f"{_describe(fh)}: bad magic {magic!r}")
    version, dtype, rank = struct.unpack("<HBB", _read_exact(fh, 4, "header"))
    if version != VERSION:
        raise MSATError(f"{_describe(fh)}: unsupported version {version}")
    if dtype not in DTYPES:
        raise MSATError(f"{_describe(fh)}: unknown dtype code {dtype}")
    return struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "extents"))


def read_tensor(fh: BinaryIO) -> np.ndarray:
    shape = read_header(fh)
    count = int(np.prod(shape, dtype=np.int64))
    payload = _read_exact(fh, 4 * count, "payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)


def save_tensor(path, array) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = read_tensor(fh)
        if fh.read(1):
            raise MSATError(f"{path}: trailing bytes after payload")
    return arr


def peek_shape(path) -> tuple[int, ...]:
    with open(path, "rb") as fh:
        return read_header(fh)


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise MSATError(f"name too long: {name[:40]}...")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        write_tensor(buf, arr)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        while True:
            head = fh.read(2)
            if not head:
                break
            if len(head) != 2:
                raise MSATError(f"{path}: truncated name length")
            (n,) = struct.unpack("<H", head)
            name = _read_exact(fh, n, "name").decode("utf-8")
            out[name] = read_tensor(fh)
    return out
