"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"MPCKPT01"
    u64 metadata length, metadata (UTF-8 JSON)
    u32 tensor count
    per tensor: u32 name length, name (UTF-8), u8 dtype (0 = f32, 1 = f64),
                u8 rank, rank x u64 dims, raw little-endian payload

The same container stores standalone prior files (metadata kind "priors").
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"MPCKPT01"
MAGIC_PREFIX = b"MPCKPT"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def atomic_write(path, payload: bytes):
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(metadata: dict, tensors: dict) -> bytes:
    meta = json.dumps({"format_version": FORMAT_VERSION, **metadata}).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(meta)), meta, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", _TAGS[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[_TAGS[arr.dtype]]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes):
    if len(buf) < len(MAGIC) or buf[:len(MAGIC_PREFIX)] != MAGIC_PREFIX:
        raise CheckpointError("invalid checkpoint magic")
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"unsupported checkpoint version {buf[6:8]!r}")
    r = _Reader(buf)
    r.take(len(MAGIC))
    (meta_len,) = r.unpack("<Q")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError("corrupt checkpoint metadata") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')!r}")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        tag, rank = r.unpack("<BB")
        if tag not in _DTYPES:
            raise CheckpointError(f"tensor {name!r}: unknown dtype tag {tag}")
        dims = r.unpack(f"<{rank}Q")
        dt = _DTYPES[tag]
        n = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.take(n * dt.itemsize), dtype=dt).reshape(dims).copy()
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after last tensor")
    return meta, tensors


def save(path, metadata, tensors):
    atomic_write(path, encode(metadata, tensors))


def load(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode(buf)
