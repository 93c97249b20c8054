"""File formats: raw float64 arrays, binary PGM images, small CSV helpers."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

VEC_MAGIC = b"DCRGF64\x00"


def write_array(path, arr) -> None:
    """Little-endian float64 payload after an 8-byte magic and a shape header.

    Header layout: magic, ``uint64`` ndim, then ``ndim`` ``uint64`` sizes.
    """
    arr = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(VEC_MAGIC)
        fh.write(struct.pack("<Q", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_array(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != VEC_MAGIC:
        raise ValueError(f"{path}: bad magic")
    (ndim,) = struct.unpack_from("<Q", raw, 8)
    shape = struct.unpack_from(f"<{ndim}Q", raw, 16)
    off = 16 + 8 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) - off != 8 * count:
        raise ValueError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(raw, dtype="<f8", offset=off).reshape(shape).copy()


def write_pgm(path, img, lo: float = 0.0, hi: float = 1.0) -> None:
    """8-bit binary PGM (P5); values are clipped to ``[lo, hi]`` then scaled."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2-D image")
    q = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    q = np.round(q * 255.0).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def _pgm_tokens(raw: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit P5 PGM into floats in [0, 1]."""
    raw = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _pgm_tokens(raw, 4)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.float64) / maxval


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(v) for v in row])


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
