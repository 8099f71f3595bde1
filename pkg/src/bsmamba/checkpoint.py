"""Binary checkpoint container.

Layout (all integers little-endian):

    4   magic "BSMK"
    u32 format version (1)
    u32 config length, then `key = value\n` UTF-8 lines
    u32 tensor count, then per tensor:
        u16 name length, name bytes,
        u8 dtype code (0 = f64, 1 = f32),
        u8 ndim, ndim * u32 dims,
        u64 payload byte offset
    raw tensor payloads (little-endian), in table order
    u32 CRC32 of everything above

Writes go to a temp file followed by an atomic rename, so an interrupted
save never leaves a checkpoint that fails its CRC.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

from .errors import CheckpointError

MAGIC = b"BSMK"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


def save_checkpoint(path: str, config: dict[str, str], tensors: dict[str, np.ndarray]) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    cfg = "".join(f"{k} = {v}\n" for k, v in sorted(config.items())).encode()
    buf += struct.pack("<I", len(cfg))
    buf += cfg

    names = sorted(tensors)
    table = bytearray()
    payload = bytearray()
    for name in names:
        arr = np.asarray(tensors[name])
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"tensor {name} has unsupported dtype {arr.dtype}")
        nb = name.encode()
        table += struct.pack("<H", len(nb)) + nb
        table += struct.pack("<BB", code, arr.ndim)
        table += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        table += struct.pack("<Q", len(payload))
        payload += arr.astype(_CODE_DTYPES[code], copy=False).tobytes()
    buf += struct.pack("<I", len(names))
    buf += table
    buf += payload
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))

    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(buf)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    crc_stored, = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != crc_stored:
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupt")

    pos = 4
    version, = struct.unpack_from("<I", raw, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    cfg_len, = struct.unpack_from("<I", raw, pos)
    pos += 4
    config: dict[str, str] = {}
    for line in raw[pos:pos + cfg_len].decode().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        config[key] = value
    pos += cfg_len

    count, = struct.unpack_from("<I", raw, pos)
    pos += 4
    entries = []
    for _ in range(count):
        nlen, = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + nlen].decode()
        pos += nlen
        code, ndim = struct.unpack_from("<BB", raw, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, pos) if ndim else ()
        pos += 4 * ndim
        offset, = struct.unpack_from("<Q", raw, pos)
        pos += 8
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{path}: tensor {name} has unknown dtype code {code}")
        entries.append((name, code, shape, offset))

    tensors: dict[str, np.ndarray] = {}
    payload_start = pos
    for name, code, shape, offset in entries:
        dtype = _CODE_DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = payload_start + offset
        arr = np.frombuffer(raw, dtype=dtype, count=n, offset=start)
        if arr.size != n:
            raise CheckpointError(f"{path}: truncated payload for tensor {name}")
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor name {name}")
        tensors[name] = arr.reshape(shape).astype(dtype.newbyteorder("="))
    return config, tensors
