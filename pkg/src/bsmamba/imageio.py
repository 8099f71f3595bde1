"""PNG and PGM file handling.

PNGs are 8-bit RGB via Pillow, exchanged as float arrays in [0,1] with
[3,H,W] layout. PGMs (binary P5) are written by hand: the mask sidecar
contract uses 16-bit label maps and 8-bit soft masks, and 16-bit samples
are big-endian per the netpbm spec.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np
from PIL import Image

from .errors import DataError


def read_png(path: str) -> np.ndarray:
    """Decode an 8-bit PNG into a float64 [3,H,W] array in [0,1]."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except (OSError, SyntaxError) as e:
        raise DataError(f"cannot decode PNG {path}: {e}") from e
    return arr.transpose(2, 0, 1)


def write_png(path: str, image: np.ndarray) -> None:
    """Write a [3,H,W] or [H,W] float array in [0,1] as an 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
        mode = "RGB"
    elif arr.ndim == 2:
        mode = "L"
    else:
        raise DataError(f"write_png: expected [3,H,W] or [H,W], got {arr.shape}")
    quant = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    _atomic_write(path, lambda f: Image.fromarray(quant, mode=mode).save(f, format="PNG"))


def read_pgm(path: str) -> tuple[np.ndarray, int]:
    """Read a binary (P5) PGM; returns (uint array [H,W], maxval)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError(f"cannot read PGM {path}: {e}") from e
    try:
        magic, rest = _token(raw, 0)
        if magic != b"P5":
            raise DataError(f"{path}: not a binary PGM (magic {magic!r})")
        w, rest = _token(raw, rest)
        h, rest = _token(raw, rest)
        maxval, rest = _token(raw, rest)
        w, h, maxval = int(w), int(h), int(maxval)
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        count = w * h
        data = np.frombuffer(raw, dtype=dtype, count=count, offset=rest)
        if data.size != count:
            raise DataError(f"{path}: truncated PGM payload")
    except (ValueError, IndexError) as e:
        raise DataError(f"{path}: malformed PGM header: {e}") from e
    return data.reshape(h, w).astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_pgm(path: str, arr: np.ndarray, maxval: int) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise DataError(f"write_pgm: expected [H,W], got {arr.shape}")
    if arr.max(initial=0) > maxval:
        raise DataError(f"write_pgm: value {arr.max()} exceeds maxval {maxval}")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode()
    payload = arr.astype(">u2" if maxval > 255 else "u1").tobytes()

    def writer(f):
        f.write(header)
        f.write(payload)

    _atomic_write(path, writer, binary=True)


def _token(raw: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited token in a PGM header, skipping # comments."""
    n = len(raw)
    while pos < n:
        ch = raw[pos:pos + 1]
        if ch == b"#":
            while pos < n and raw[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not raw[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("unexpected end of header")
    return raw[start:pos], pos + 1


def _atomic_write(path: str, writer, binary: bool = True) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb" if binary else "w") as f:
            writer(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
