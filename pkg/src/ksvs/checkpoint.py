"""Binary checkpoint container.

Layout (little-endian)::

    b"SVSK" | u32 version | u32 meta_len | meta JSON (utf-8, sorted keys)
    u32 n_records | n x (u16 name_len | name | u8 ndim | u32 dims... | f32 payload)
"""
from __future__ import annotations

import json
import struct
from typing import Dict

import numpy as np
import torch

from .io_utils import atomic_write_bytes

MAGIC = b"SVSK"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


def encode(meta: dict, tensors: Dict[str, torch.Tensor]) -> bytes:
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy().astype("<f4")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(data: bytes):
    """Parse fully before returning, so a bad file never yields partial state."""
    if data[:4] != MAGIC:
        raise BadMagicError("not a checkpoint (bad magic)")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    version, meta_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    try:
        meta = json.loads(take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt metadata: {e}") from None
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after last record")
    return meta, tensors


def save(path, meta: dict, tensors: Dict[str, torch.Tensor]) -> None:
    atomic_write_bytes(path, encode(meta, tensors))


def load(path):
    with open(path, "rb") as f:
        return decode(f.read())
