"""Versioned binary checkpoints.

Header fields: ``version``, ``config``, ``tensors`` (name -> shape, byte
offset, byte length, in parameter order), ``digest`` (CRC-32 of the
payload) and free-form ``meta`` (training metadata). The payload is the
concatenated little-endian float32 parameter values.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..container import FormatError, crc32, pack, unpack, write_atomic
from .model import ConfigError, ModelConfig, StRecModel

VERSION = 1


class CheckpointError(FormatError):
    pass


def checkpoint_bytes(model: StRecModel, meta: dict | None = None) -> bytes:
    tensors, chunks, off = {}, [], 0
    for name, p in model.store.items():
        b = np.ascontiguousarray(p.value, dtype="<f4").tobytes()
        tensors[name] = {"shape": list(p.value.shape), "offset": off, "nbytes": len(b)}
        chunks.append(b)
        off += len(b)
    payload = b"".join(chunks)
    header = {
        "version": VERSION,
        "config": model.config.to_dict(),
        "tensors": tensors,
        "digest": crc32(payload),
        "meta": model.meta if meta is None else meta,
    }
    return pack(header, payload)


def save_checkpoint(model: StRecModel, path, meta: dict | None = None) -> None:
    write_atomic(path, checkpoint_bytes(model, meta))


def model_from_bytes(blob: bytes, variant: str | None = None) -> StRecModel:
    header, payload = unpack(blob)
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r} (expected {VERSION})")
    tensors = header.get("tensors", {})
    need = sum(t["nbytes"] for t in tensors.values())
    if len(payload) < need:
        raise CheckpointError(f"truncated checkpoint: payload {len(payload)} bytes, expected {need}")
    if len(payload) != need:
        raise CheckpointError(f"checkpoint payload {len(payload)} bytes, expected {need}")
    if crc32(payload) != header.get("digest"):
        raise CheckpointError("checkpoint digest mismatch: payload is corrupted")
    config = ModelConfig.from_dict(header["config"])
    if variant is not None and config.variant != variant:
        raise ConfigError(f"config error: checkpoint holds a {config.variant!r} model, expected {variant!r}")
    model = StRecModel(config, seed=0)
    if set(tensors) != set(model.store):
        raise ConfigError("config error: checkpoint tensors do not match the configured architecture")
    for name, t in tensors.items():
        want = model.store[name].shape
        if tuple(t["shape"]) != want:
            raise ConfigError(f"config error: tensor {name!r} has shape {t['shape']}, config implies {list(want)}")
        raw = np.frombuffer(payload, dtype="<f4", count=int(np.prod(want)), offset=t["offset"])
        model.store.set_value(name, raw.reshape(want))
    model.meta = header.get("meta", {})
    return model


def load_checkpoint(path, variant: str | None = None) -> StRecModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return model_from_bytes(path.read_bytes(), variant)
