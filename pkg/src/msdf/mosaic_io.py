"""Binary serialization of grid-bank representations.

Little-endian layout: magic ``MSDF``, version u32 (currently 1), n u32,
k u32, flags u32 (bit 0: channel-stats block present), reserved u32 (a
24-byte header), then centers as n x 3 f32, scales as n f32, values as
n*k^3 f32 (row-major, x fastest), and, when flagged, six f32 channel
statistics (per-axis center mean, center max-norm, scale mean, scale
max-norm).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .channels import ChannelStats
from .mosaic import MosaicSdf

MAGIC = b"MSDF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class FormatError(ValueError):
    """Malformed or truncated representation file."""


def save(x: MosaicSdf, path: str | Path, stats: ChannelStats | None = None) -> None:
    flags = 1 if stats is not None else 0
    blob = bytearray(_HEADER.pack(MAGIC, VERSION, x.n, x.k, flags, 0))
    blob += x.centers.astype("<f4").tobytes()
    blob += x.scales.astype("<f4").tobytes()
    blob += x.values.astype("<f4").tobytes()
    if stats is not None:
        blob += np.array([*stats.p_mean, stats.p_scale, stats.s_mean, stats.s_scale],
                         dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load(path: str | Path, with_stats: bool = False):
    """Read a representation; ``with_stats=True`` returns (bank, stats-or-None)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the 24-byte header")
    magic, version, n, k, flags, _ = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n < 1 or k < 2:
        raise FormatError(f"{path}: invalid dimensions n={n} k={k}")
    body = n * (3 + 1 + k ** 3) * 4
    expected = _HEADER.size + body + (24 if flags & 1 else 0)
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = _HEADER.size
    centers = np.frombuffer(raw, "<f4", n * 3, off).reshape(n, 3)
    off += n * 12
    scales = np.frombuffer(raw, "<f4", n, off)
    off += n * 4
    values = np.frombuffer(raw, "<f4", n * k ** 3, off).reshape(n, k, k, k)
    off += n * k ** 3 * 4
    x = MosaicSdf(centers.copy(), scales.copy(), values.copy())
    if not with_stats:
        return x
    stats = None
    if flags & 1:
        st = np.frombuffer(raw, "<f4", 6, off).astype(np.float64)
        stats = ChannelStats(st[:3], float(st[3]), float(st[4]), float(st[5]))
    return x, stats
