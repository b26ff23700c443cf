"""Versioned binary checkpoints.

Layout (little-endian)::

    magic     8 bytes  b"FDINCKPT"
    version   u32
    digest    64 bytes ascii hex sha256 of the model config
    config    u32 length + utf-8 JSON (model config)
    meta      u32 length + utf-8 JSON (free-form: tool version, training info)
    count     u32
    tensors   count x { u16 name length, name, u8 real code, u8 ndim,
                        ndim x u64 dims, raw reals }
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .data import DatasetFormatError
from .model import InterpreterNetwork

CKPT_MAGIC = b"FDINCKPT"
CKPT_VERSION = 1
_REALS = {1: np.dtype("<f8"), 2: np.dtype("<f4")}
_CODES = {np.dtype("float64"): 1, np.dtype("float32"): 2}


class CheckpointError(DatasetFormatError):
    pass


def write_tensors(path: str | Path, tensors: dict[str, np.ndarray], config: dict,
                  digest: str, meta: dict | None = None) -> None:
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    mt = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    if len(digest) != 64:
        raise ValueError("digest must be 64 hex characters")
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), digest.encode("ascii"),
             struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(mt)), mt,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<BB", code, arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape),
                  np.ascontiguousarray(arr, dtype=_REALS[code]).tobytes()]
    Path(path).write_bytes(b"".join(parts))


def read_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict, str, dict]:
    """Return ``(tensors, config, digest, meta)``."""
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(8, "magic") != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = take(64, "digest").decode("ascii")
    (n,) = struct.unpack("<I", take(4, "config length"))
    config = json.loads(take(n, "config").decode("utf-8"))
    (n,) = struct.unpack("<I", take(4, "meta length"))
    meta = json.loads(take(n, "meta").decode("utf-8"))
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for k in range(count):
        (n,) = struct.unpack("<H", take(2, f"tensor {k} name"))
        name = take(n, f"tensor {k} name").decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2, f"tensor {name}"))
        if code not in _REALS:
            raise CheckpointError(f"{path}: tensor {name} has unknown real code {code}")
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim, f"tensor {name} shape"))
        real = _REALS[code]
        size = int(np.prod(shape, dtype=np.int64))
        buf = take(size * real.itemsize, f"tensor {name} data")
        tensors[name] = np.frombuffer(buf, dtype=real).astype(real.newbyteorder("=")).reshape(shape)
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return tensors, config, digest, meta


def save_model(model: InterpreterNetwork, path: str | Path, meta: dict | None = None) -> None:
    cfg = model.config.to_dict()
    write_tensors(path, model.state(), cfg, model.config.digest(), meta)


def load_model(path: str | Path, expect_digest: str | None = None) -> tuple[InterpreterNetwork, dict]:
    tensors, cfg, digest, meta = read_tensors(path)
    config = ModelConfig.from_dict(cfg)
    if config.digest() != digest:
        raise CheckpointError(f"{path}: stored digest does not match its embedded config")
    if expect_digest is not None and expect_digest != digest:
        raise CheckpointError(f"{path}: checkpoint config digest {digest[:12]} does not match "
                              f"the requested config digest {expect_digest[:12]}")
    model = InterpreterNetwork(config)
    model.load_state(tensors)
    return model, meta
