"""S2A1: a small portable tensor container.

Layout, all integers little-endian::

    b"S2A1"  u32 version=1  u32 tensor_count
    per tensor: u16 name_len, UTF-8 name, u8 rank, rank x u32 extents,
                f32 row-major payload
    u32 json_len, UTF-8 JSON metadata

Every tensor is stored as float32 regardless of its in-memory dtype.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ContainerError

MAGIC = b"S2A1"
VERSION = 1


def encode(tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    seen = set()
    for name, array in tensors.items():
        raw = name.encode("utf-8")
        if not raw:
            raise ContainerError("tensor names must be non-empty")
        if len(raw) > 0xFFFF:
            raise ContainerError(f"tensor name longer than 65535 bytes: {name[:40]}...")
        if name in seen:
            raise ContainerError(f"duplicate tensor name {name!r}")
        seen.add(name)
        arr = np.asarray(array)
        if arr.ndim > 255:
            raise ContainerError(f"{name}: rank {arr.ndim} exceeds 255")
        if arr.dtype.kind not in "fiub":
            raise ContainerError(f"{name}: unsupported dtype {arr.dtype}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise ContainerError(
                f"truncated container: need {n} bytes for {what} at byte offset {self.pos}, "
                f"only {len(self.buf) - self.pos} left"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r} at byte offset 0, expected {MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version} (this reader handles {VERSION})")
    (count,) = r.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = r.unpack("<H", f"name length of tensor {i}")
        if name_len == 0:
            raise ContainerError(f"empty tensor name at byte offset {r.pos - 2}")
        try:
            name = r.take(name_len, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ContainerError(f"tensor {i} name is not UTF-8 (byte offset {r.pos - name_len})") from exc
        (rank,) = r.unpack("<B", f"rank of {name!r}")
        shape = r.unpack(f"<{rank}I", f"extents of {name!r}") if rank else ()
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = r.take(4 * n, f"payload of {name!r}")
        if name in tensors:
            raise ContainerError(f"duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    (json_len,) = r.unpack("<I", "metadata length")
    blob = r.take(json_len, "metadata")
    if r.pos != len(buf):
        raise ContainerError(f"{len(buf) - r.pos} trailing bytes after metadata at byte offset {r.pos}")
    try:
        meta = json.loads(blob.decode("utf-8")) if json_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"metadata is not valid JSON: {exc}") from exc
    return tensors, meta


def write(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(encode(tensors, meta))


def read(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())
