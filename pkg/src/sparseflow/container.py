"""Binary container shared by field, initial-estimate and checkpoint files.

Layout: magic ``STFE1\\n``, u32 little-endian header length, UTF-8 JSON
header, then a raw payload of little-endian float32 values.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"STFE1\n"


class FormatError(ValueError):
    pass


def pack(header: dict, payload: bytes) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def unpack(blob: bytes) -> tuple[dict, bytes]:
    if not blob.startswith(MAGIC):
        raise FormatError("bad magic: not an STFE1 container")
    off = len(MAGIC)
    if len(blob) < off + 4:
        raise FormatError("truncated container: missing header length")
    (n,) = struct.unpack_from("<I", blob, off)
    off += 4
    if len(blob) < off + n:
        raise FormatError("truncated container: header cut short")
    try:
        header = json.loads(blob[off:off + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from None
    return header, blob[off + n:]


def write_atomic(path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def f32_bytes(*arrays) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)


def f32_planes(payload: bytes, n_planes: int, shape) -> list[np.ndarray]:
    per = int(np.prod(shape))
    if len(payload) != 4 * per * n_planes:
        raise FormatError(f"payload has {len(payload)} bytes, expected {4 * per * n_planes}")
    flat = np.frombuffer(payload, dtype="<f4")
    return [flat[i * per:(i + 1) * per].reshape(shape).astype(np.float32) for i in range(n_planes)]


def crc32(payload: bytes) -> int:
    return zlib.crc32(payload) & 0xFFFFFFFF
