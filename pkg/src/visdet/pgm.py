"""16-bit binary PGM export for distance maps.

Maps are stored as "P5" with maxval 65535, big-endian samples, and values
fixed-point encoded as round(D * scale) clamped to the sample range. The
scale factor is recorded in a comment line so readers can undo it.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

DEFAULT_SCALE = 64


def encode_pgm16(values: np.ndarray, scale: int = DEFAULT_SCALE) -> bytes:
    """Serialize a nonnegative 2D array as a 16-bit PGM with a scale comment."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D array, got shape {arr.shape}")
    quantized = np.clip(np.rint(arr * scale), 0, 65535).astype(">u2")
    h, w = arr.shape
    header = f"P5\n# scale={scale}\n{w} {h}\n65535\n".encode("ascii")
    return header + quantized.tobytes()


def write_pgm16(path: str | Path, values: np.ndarray, scale: int = DEFAULT_SCALE) -> None:
    Path(path).write_bytes(encode_pgm16(values, scale))


def read_pgm16(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PGM written by this module; returns (values / scale, scale)."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM file")
    scale = DEFAULT_SCALE
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            end = data.index(b"\n", pos)
            m = re.search(rb"scale=(\d+)", data[pos:end])
            if m:
                scale = int(m.group(1))
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    w, h, maxval = fields
    if maxval != 65535:
        raise ValueError(f"{path}: expected maxval 65535, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    raw = np.frombuffer(data, dtype=">u2", count=w * h, offset=pos)
    return raw.reshape(h, w).astype(np.float64) / scale, scale
