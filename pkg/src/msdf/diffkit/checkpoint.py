"""Checkpoint serialization for parameter dicts.

Little-endian layout: magic ``MSFM``, version u32, count u32, then one
record per parameter: name length u16, name bytes (utf-8), rank u8, dims
u32 per axis, f32 data.  EMA shadow parameters are stored under an
``ema/`` name prefix.  An optional trailer (u32 length + bytes) follows
the records; callers use it for model configuration.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MSFM"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray],
                    trailer: bytes = b"") -> None:
    blob = bytearray(struct.pack("<4sII", MAGIC, VERSION, len(params)))
    for name, arr in params.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        blob += struct.pack("<H", len(raw))
        blob += raw
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    if trailer:
        blob += struct.pack("<I", len(trailer))
        blob += trailer
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise CheckpointError(f"{path}: shorter than the 12-byte header")
    magic, version, count = struct.unpack_from("<4sII", raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    params: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", raw, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(raw, "<f4", size, off).reshape(dims)
            off += 4 * size
            params[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated record ({exc})") from exc
    trailer = b""
    if off < len(raw):
        if off + 4 > len(raw):
            raise CheckpointError(f"{path}: dangling trailer length")
        (tlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        if off + tlen != len(raw):
            raise CheckpointError(f"{path}: trailer length mismatch")
        trailer = raw[off:off + tlen]
    return params, trailer
