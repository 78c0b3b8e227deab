"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"LMAE" | version:u32 | count:u32 |
    count x ( name_len:u32 | name:utf-8 | dtype:u8 | rank:u32 | dims:u64*rank | raw values ) |
    crc32:u32 over every preceding byte

Parameters are stored under their own names, optimizer state under
``optim/``, run metadata as UTF-8 JSON in uint8 records under ``meta/``.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError

MAGIC = b"LMAE"
VERSION = 1

_TAGS = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i8"): 2,
    np.dtype("u1"): 3,
}
_DTYPES = {tag: dt for dt, tag in _TAGS.items()}


class CheckpointError(DataError):
    pass


def _canonical(name: str, dtype: np.dtype) -> np.dtype:
    for dt in _TAGS:
        if dtype.kind == dt.kind and dtype.itemsize == dt.itemsize:
            return dt
    raise CheckpointError(f"{name}: unsupported dtype {dtype}")


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value)
        dt = _canonical(name, arr.dtype)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BI", _TAGS[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not an LMAE checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off : off + n].decode("utf-8")
            off += n
            tag, rank = struct.unpack_from("<BI", body, off)
            off += 5
            dims = struct.unpack_from(f"<{rank}Q", body, off)
            off += 8 * rank
            dt = _DTYPES[tag]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            out[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(dims).copy()
            off += nbytes
    except (struct.error, KeyError, ValueError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from None
    if off != len(body):
        raise CheckpointError("trailing bytes after the last record")
    return out


def save(path: str | Path, tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    """Write atomically (temp file + rename) so a crash never leaves a torn file."""
    records = dict(tensors)
    for key, value in (meta or {}).items():
        records[f"meta/{key}"] = np.frombuffer(json.dumps(value, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(records))
    os.replace(tmp, path)


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    records = decode(path.read_bytes())
    meta = {
        k[len("meta/") :]: json.loads(v.tobytes().decode("utf-8")) for k, v in records.items() if k.startswith("meta/")
    }
    tensors = {k: v for k, v in records.items() if not k.startswith("meta/")}
    return tensors, meta
