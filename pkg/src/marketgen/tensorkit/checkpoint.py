"""Flat binary container for named float64 arrays.

Layout (all integers little-endian):
    magic  5 bytes  b"DIGA1"
    u32    format version (1)
    u32    record count
then per record, sorted by name:
    u32    name length in bytes
    bytes  utf-8 name
    u32    rank
    u64[]  dims
    f64[]  row-major data, little-endian
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"DIGA1"
VERSION = 1


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"bad container magic {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported container version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise ValueError(f"truncated record for {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
        return out
