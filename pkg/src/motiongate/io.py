"""On-disk formats: token streams, PGM images, atomic writes.

Token stream layout (all little-endian)::

    b"MUT3RTOK"                      8-byte magic
    u32 version (=1), u32 T, u32 N, u32 C
    f32[T * N * C]                   frame-major, then token-major
    optional: b"DYNM" + N bytes      per-token label, 0 static / 1 dynamic
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"MUT3RTOK"
LABEL_MAGIC = b"DYNM"
VERSION = 1
_HEADER = struct.Struct("<8s4I")


class StreamFormatError(ValueError):
    """A token-stream file is truncated, oversized or has a bad header."""


def atomic_write(path, data: bytes):
    """Write ``data`` to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_stream(frames, labels=None) -> bytes:
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 3:
        raise ValueError(f"frames must be (T, N, C), got {frames.shape}")
    t, n, c = frames.shape
    parts = [_HEADER.pack(MAGIC, VERSION, t, n, c), frames.tobytes(order="C")]
    if labels is not None:
        lab = np.asarray(labels, dtype=bool)
        if lab.shape != (n,):
            raise ValueError(f"labels must have {n} entries, got {lab.shape}")
        parts += [LABEL_MAGIC, lab.astype(np.uint8).tobytes()]
    return b"".join(parts)


def decode_stream(blob: bytes):
    """Return ``(frames[T, N, C] float32, labels[N] bool or None)``."""
    if len(blob) < _HEADER.size:
        raise StreamFormatError("file shorter than the stream header")
    magic, version, t, n, c = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise StreamFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise StreamFormatError(f"unsupported stream version {version}")
    payload = 4 * t * n * c
    end = _HEADER.size + payload
    if len(blob) < end:
        raise StreamFormatError(f"payload truncated: need {payload} bytes, have {len(blob) - _HEADER.size}")
    frames = np.frombuffer(blob, dtype="<f4", count=t * n * c, offset=_HEADER.size)
    frames = frames.astype(np.float32).reshape(t, n, c)
    rest = blob[end:]
    if not rest:
        return frames, None
    if len(rest) != len(LABEL_MAGIC) + n or rest[:4] != LABEL_MAGIC:
        raise StreamFormatError("trailing bytes are not a valid label block")
    lab = np.frombuffer(rest, dtype=np.uint8, offset=4)
    if np.any(lab > 1):
        raise StreamFormatError("label bytes must be 0 or 1")
    return frames, lab.astype(bool)


def write_stream(path, frames, labels=None):
    atomic_write(path, encode_stream(frames, labels))


def read_stream(path):
    return decode_stream(Path(path).read_bytes())


def encode_pgm(values):
    """Binary P5 image, min-max scaled to 0..255. Returns ``(bytes, lo, hi)``.

    A constant map encodes as all zeros.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("PGM needs a 2-D array")
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        gray = np.rint((v - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        gray = np.zeros(v.shape, dtype=np.uint8)
    header = f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii")
    return header + gray.tobytes(), lo, hi


def write_pgm(path, values):
    data, lo, hi = encode_pgm(values)
    atomic_write(path, data)
    return lo, hi


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    return np.frombuffer(blob[-w * h:], dtype=np.uint8).reshape(h, w)
