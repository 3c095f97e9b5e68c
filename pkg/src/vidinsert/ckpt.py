"""Checkpoint serialization: named float32 arrays in the GIVCKPT1 format.

Layout: the magic string ``GIVCKPT1``, then one record per array:
u64-LE name length, UTF-8 name bytes, u64-LE rank, u64-LE dims, then the
raw little-endian float32 data. Records are read until EOF. Round-trips
are bit-exact because data moves as raw bytes, never through arithmetic.

Non-array metadata (configs, counters) rides along as a JSON blob packed
into the float32 payload of a reserved ``__meta__`` record.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"GIVCKPT1"
META_KEY = "__meta__"


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    name_bytes = name.encode("utf-8")
    fh.write(struct.pack("<Q", len(name_bytes)))
    fh.write(name_bytes)
    fh.write(struct.pack("<Q", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<Q", dim))
    data = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(data.tobytes())


def _read_exact(fh, count: int) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise ContractError("truncated checkpoint record")
    return buf


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays in insertion order."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in arrays.items():
            _write_record(fh, name, np.asarray(arr, dtype=np.float32))


def load_arrays(path) -> dict[str, np.ndarray]:
    """Read records until EOF, preserving file order."""
    path = Path(path)
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ContractError(f"{path} is not a checkpoint (bad magic {magic!r})")
        while True:
            head = fh.read(8)
            if not head:
                break
            (name_len,) = struct.unpack("<Q", head)
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<Q", _read_exact(fh, 8))
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(rank)
            )
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(fh, count * 4)
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
            out[name] = arr
    return out


def pack_meta(obj) -> np.ndarray:
    """JSON-encode ``obj`` into a float32 payload (space-padded to x4 bytes)."""
    blob = json.dumps(obj, sort_keys=True).encode("utf-8")
    pad = (-len(blob)) % 4
    blob += b" " * pad
    return np.frombuffer(blob, dtype="<f4").copy()


def unpack_meta(arr: np.ndarray):
    blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return json.loads(blob.decode("utf-8"))
