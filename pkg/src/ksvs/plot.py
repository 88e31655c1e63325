"""Grayscale spectrogram images (PGM always, PNG alongside) without plotting libraries."""
from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from .io_utils import atomic_write_bytes


def to_gray(spec: np.ndarray) -> np.ndarray:
    """(freq, time) -> uint8 image rows with the highest frequency on top; constant input maps to 128."""
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim != 2 or spec.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {spec.shape}")
    if not np.all(np.isfinite(spec)):
        raise ValueError("spectrogram has non-finite values")
    lo, hi = spec.min(), spec.max()
    scaled = np.full(spec.shape, 0.5) if hi == lo else (spec - lo) / (hi - lo)
    return np.round(scaled[::-1] * 255).astype(np.uint8)


def pgm_bytes(img: np.ndarray) -> bytes:
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def png_bytes(img: np.ndarray) -> bytes:
    h, w = img.shape

    def chunk(tag, data):
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    raw = b"".join(b"\x00" + img[r].tobytes() for r in range(h))
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)


def render_spectrogram_image(spec: np.ndarray, path, png: bool = True) -> list:
    """Write ``path`` (.pgm) and, if requested, a sibling .png; returns the written paths."""
    img = to_gray(spec)
    path = os.fspath(path)
    root, _ = os.path.splitext(path)
    pgm_path = root + ".pgm"
    atomic_write_bytes(pgm_path, pgm_bytes(img))
    written = [pgm_path]
    if png:
        atomic_write_bytes(root + ".png", png_bytes(img))
        written.append(root + ".png")
    return written
