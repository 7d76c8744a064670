"""Binary parameter checkpoints.

Layout (little-endian): ``b"GZSN"``, u16 version, u32 record count, then per
record: u16 name length, UTF-8 name, u8 dtype code (0 = f32), u8 rank,
u32 dims[rank], row-major f32 payload.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"GZSN"
VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4")}


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def encode(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", 0, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    pos = 0

    def read(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset {pos}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(read(4)) != MAGIC:
        raise CheckpointError("bad magic; not a GZSN checkpoint")
    version, count = struct.unpack("<HI", read(6))
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} unsupported (reader is v{VERSION})")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", read(2))
        name = bytes(read(nlen)).decode("utf-8")
        code, rank = struct.unpack("<BB", read(2))
        if code not in DTYPE_CODES:
            raise CheckpointError(f"record {name!r}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}I", read(4 * rank))
        dt = DTYPE_CODES[code]
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = np.frombuffer(read(n * dt.itemsize), dtype=dt).reshape(dims)
        out[name] = payload.astype(np.float32)
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last record")
    return out


def save_checkpoint(params: Mapping[str, np.ndarray], path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(params))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
