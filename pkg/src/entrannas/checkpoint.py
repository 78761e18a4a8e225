"""Little-endian checkpoint container and atomic file writes.

Layout::

    b"ENTC" | u32 version | u32 n | n x entry
    entry: u32 name_len | name utf-8 | u32 ndim | ndim x u64 dim | f64 data

A JSON metadata blob travels as the reserved entry ``__meta__`` whose
``data`` is the UTF-8 bytes widened to f64 (one byte per value).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"ENTC"
VERSION = 1
META = "__meta__"


class CheckpointError(ValueError):
    pass


def atomic_write(path: str | Path, payload: bytes | str) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, str):
        payload = payload.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = dict(arrays)
    if meta is not None:
        entries[META] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8).astype(np.float64)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def decode(raw: bytes) -> tuple[dict[str, np.ndarray], dict | None]:
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos, arrays = 12, {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4:pos + 4 + name_len].decode()
            pos += 4 + name_len
            (ndim,) = struct.unpack_from("<I", raw, pos)
            shape = struct.unpack_from(f"<{ndim}Q", raw, pos + 4)
            pos += 4 + 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(raw):
                raise CheckpointError(f"entry {name!r} truncated")
            arrays[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    meta = None
    if META in arrays:
        meta = json.loads(arrays.pop(META).astype(np.uint8).tobytes().decode())
    return arrays, meta


def save(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    atomic_write(path, encode(arrays, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict | None]:
    return decode(Path(path).read_bytes())
