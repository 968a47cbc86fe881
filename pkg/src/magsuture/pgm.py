"""Binary-mask exchange format: 8-bit PGM (P5).

Masks are written with needle pixels at 255 and background at 0; on read,
any pixel at or above half of maxval counts as needle.
"""

from __future__ import annotations

import numpy as np

__all__ = ["read_pgm", "write_pgm"]

_THRESHOLD_NUM = 128  # of maxval 255


def write_pgm(path, mask):
    """Write a boolean mask as a P5 PGM with maxval 255."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-d, got shape {mask.shape}")
    data = np.where(mask.astype(bool), 255, 0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_tokens(raw, count):
    """Pull ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(raw):
            raise ValueError("truncated PGM header")
        ch = raw[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    return tokens, pos + 1  # header ends with exactly one whitespace byte


def read_pgm(path):
    """Read a P5 PGM into a boolean mask (pixel >= maxval/2 -> True)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary (P5) PGM")
    tokens, offset = _read_tokens(raw[2:], 3)
    w, h, maxval = (int(t) for t in tokens)
    if not (0 < maxval < 256):
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    n = w * h
    body = raw[2 + offset:2 + offset + n]
    if len(body) != n:
        raise ValueError(f"{path}: expected {n} pixel bytes, got {len(body)}")
    img = np.frombuffer(body, dtype=np.uint8).reshape(h, w)
    return img >= (maxval + 1) // 2
