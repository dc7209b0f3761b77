"""Portable float map (PFM) and binary PPM readers and writers.

Fields travel as PFM (float32, 1 or 3 channels), 8-bit images as PPM P6.
Rows are written top to bottom in both formats so the in-memory y-down
layout round-trips bit for bit.  The PFM scale field's sign encodes the
byte order: negative means little-endian.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def _read_token(fh, consumed):
    """Next whitespace-delimited header token; returns (token, consumed)."""
    tok = b""
    while True:
        ch = fh.read(1)
        if ch == b"":
            raise ValidationError(f"malformed header: unexpected end of file at byte {consumed}")
        consumed += 1
        if ch.isspace():
            if tok:
                return tok, consumed
            continue
        tok += ch


def write_pfm(path, array: np.ndarray, byte_order: str = "<"):
    """Write an (H, W) or (H, W, {1, 3}) float array as PFM."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValidationError(f"pfm arrays must have 1 or 3 channels, got shape {arr.shape}")
    if byte_order not in ("<", ">"):
        raise ValidationError("byte order must be '<' or '>'")
    header = b"PF\n" if arr.shape[2] == 3 else b"Pf\n"
    scale = -1.0 if byte_order == "<" else 1.0
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode())
        fh.write(f"{scale:.1f}\n".encode())
        fh.write(arr.astype(byte_order + "f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into an (H, W, C) float64 array."""
    with open(path, "rb") as fh:
        consumed = 0
        kind, consumed = _read_token(fh, consumed)
        if kind not in (b"PF", b"Pf"):
            raise ValidationError(f"malformed header: bad magic {kind!r} at byte 0")
        channels = 3 if kind == b"PF" else 1
        wtok, consumed = _read_token(fh, consumed)
        htok, consumed = _read_token(fh, consumed)
        stok, consumed = _read_token(fh, consumed)
        try:
            w, h = int(wtok), int(htok)
            scale = float(stok)
        except ValueError:
            raise ValidationError(f"malformed header: bad dimensions or scale at byte {consumed}")
        if w < 1 or h < 1 or scale == 0.0:
            raise ValidationError(f"malformed header: bad dimensions or scale at byte {consumed}")
        order = "<" if scale < 0 else ">"
        raw = fh.read(w * h * channels * 4)
        if len(raw) != w * h * channels * 4:
            raise ValidationError(
                f"truncated pfm data at byte {consumed + len(raw)}: "
                f"expected {w * h * channels * 4} bytes")
        data = np.frombuffer(raw, dtype=order + "f4").reshape(h, w, channels)
    return data.astype(np.float64)


def write_ppm(path, array: np.ndarray):
    """Write an (H, W, 3) array in [0, 1] as binary PPM."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"ppm arrays must be HxWx3, got shape {arr.shape}")
    quant = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        fh.write(quant.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into an (H, W, 3) float64 array in [0, 1]."""
    with open(path, "rb") as fh:
        consumed = 0
        magic, consumed = _read_token(fh, consumed)
        if magic != b"P6":
            raise ValidationError(f"malformed header: bad magic {magic!r} at byte 0")
        wtok, consumed = _read_token(fh, consumed)
        htok, consumed = _read_token(fh, consumed)
        mtok, consumed = _read_token(fh, consumed)
        try:
            w, h, maxval = int(wtok), int(htok), int(mtok)
        except ValueError:
            raise ValidationError(f"malformed header: bad dimensions at byte {consumed}")
        if w < 1 or h < 1 or maxval != 255:
            raise ValidationError(f"malformed header: unsupported ppm at byte {consumed}")
        raw = fh.read(w * h * 3)
        if len(raw) != w * h * 3:
            raise ValidationError(f"truncated ppm data at byte {consumed + len(raw)}")
        data = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return data.astype(np.float64) / 255.0
