"""Flat parameter archive.

Layout (all integers little-endian)::

    magic     8 bytes  b"GOCARCH\\0"
    version   u32
    meta_len  u64, then meta_len bytes of UTF-8 JSON (config, provenance)
    count     u32
    entries   count x (name_len u32, name, ndim u32, ndim x u64 extents,
                       prod(extents) x float64 little-endian)

Entries are written in sorted name order so identical parameters give
identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ContractViolation

MAGIC = b"GOCARCH\0"
VERSION = 1


def dumps(params: Mapping[str, np.ndarray], meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f8")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise ContractViolation("not a parameter archive (bad magic)")
    pos = 8
    (version,) = struct.unpack_from("<I", view, pos)
    pos += 4
    if version != VERSION:
        raise ContractViolation(f"unsupported archive version {version}")
    (meta_len,) = struct.unpack_from("<Q", view, pos)
    pos += 8
    meta = json.loads(bytes(view[pos : pos + meta_len]).decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", view, pos)
        pos += 4
        name = bytes(view[pos : pos + name_len]).decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<I", view, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(view[pos : pos + 8 * size], dtype="<f8").reshape(shape).copy()
        pos += 8 * size
        params[name] = arr
    if pos != len(data):
        raise ContractViolation("trailing bytes in parameter archive")
    return params, meta


def save(path, params: Mapping[str, np.ndarray], meta: dict | None = None) -> str:
    """Write an archive and return its sha256 hex digest."""
    data = dumps(params, meta)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())


def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
