"""Order-invariant floating point reductions.

Floating point addition is commutative but not associative, so a plain sum
over a permuted sequence can differ in the last bits.  The reductions here
quantize addends onto a power-of-two grid sized so that every partial sum
is an exact integer in double precision; integer addition is associative,
so the result depends only on the multiset of addends, never their order.
The grid is chosen from the max magnitude (itself order-invariant), leaving
~40+ significant bits, far below float32 storage rounding.

Used wherever a reduction must commute with row permutations bit-exactly:
blended field evaluation over covering grids, attention over set tokens,
and the adaptive stepper's error norm.
"""

from __future__ import annotations

import numpy as np

_SUM_BUDGET = 52  # bits available for |sum of quantized addends|


def _pow2_scale(max_mag: np.ndarray, bits: int | np.ndarray) -> np.ndarray:
    """Largest power of two s with max_mag * s < 2**bits (1 where max_mag == 0)."""
    m = np.asarray(max_mag, dtype=np.float64)
    _, exp = np.frexp(m)  # m = f * 2**exp, f in [0.5, 1)
    scale = np.ldexp(1.0, bits - exp)
    return np.where(m > 0.0, scale, 1.0)


def invariant_sum(x: np.ndarray, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    """Permutation-invariant sum along ``axis``.

    Exact for the quantized addends; relative quantization error is about
    2**-(52 - 2*log2(n)) of the largest addend.  Non-finite inputs fall back
    to a plain sum (the caller's divergence handling deals with those).
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        return np.sum(x, axis=axis, keepdims=keepdims)
    n = max(x.shape[axis], 1)
    bits = _SUM_BUDGET - int(np.ceil(np.log2(n))) if n > 1 else _SUM_BUDGET
    m = np.max(np.abs(x), axis=axis, keepdims=True)
    scale = _pow2_scale(m, bits)
    total = np.sum(np.rint(x * scale), axis=axis, keepdims=True) / scale
    return total if keepdims else np.squeeze(total, axis=axis)


def invariant_segment_sum(values: np.ndarray, starts: np.ndarray, total: int | None = None) -> np.ndarray:
    """Permutation-invariant sums of contiguous segments of a 1-D array.

    ``starts`` holds each segment's first index (monotone, may repeat for
    empty segments, last segment runs to the end).  Returns one value per
    segment; empty segments sum to zero.

    The quantization grid is sized per segment (own max magnitude, own
    count), so a segment's sum depends only on its own multiset of addends,
    never on what else shares the batch.
    """
    values = np.asarray(values, dtype=np.float64)
    nseg = len(starts)
    if nseg == 0:
        return np.zeros(0)
    if len(values) == 0:
        return np.zeros(nseg)
    ends = np.empty(nseg, dtype=np.int64)
    ends[:-1] = starts[1:]
    ends[-1] = len(values)
    counts = ends - starts
    nonempty = counts > 0
    out = np.zeros(nseg)
    if not nonempty.any():
        return out
    ne_starts = np.asarray(starts)[nonempty]
    if not np.isfinite(values).all():
        out[nonempty] = np.add.reduceat(values, ne_starts)
        return out
    seg_counts = counts[nonempty]
    bits = np.where(seg_counts > 1,
                    _SUM_BUDGET - np.ceil(np.log2(np.maximum(seg_counts, 2))).astype(np.int64),
                    _SUM_BUDGET)
    m = np.maximum.reduceat(np.abs(values), ne_starts)
    scale = _pow2_scale(m, bits)
    expand = np.repeat(scale, seg_counts)
    out[nonempty] = np.add.reduceat(np.rint(values * expand), ne_starts) / scale
    return out


def invariant_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Permutation-invariant ``a @ b`` (same contract as np.matmul, float64).

    Both operands are split into high and low power-of-two quantized parts;
    the three significant products are exact integer matmuls, so the result
    is independent of the contraction order BLAS chooses and of any
    permutation applied jointly to the contracted axis.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        return a @ b
    t = a.shape[-1]
    width = int(np.ceil(np.log2(max(t, 2))))
    bits = (_SUM_BUDGET - width) // 2
    sa = float(_pow2_scale(np.max(np.abs(a)), bits))
    sb = float(_pow2_scale(np.max(np.abs(b)), bits))
    ah = np.rint(a * sa)
    al = np.rint((a * sa - ah) * np.ldexp(1.0, bits))
    bh = np.rint(b * sb)
    bl = np.rint((b * sb - bh) * np.ldexp(1.0, bits))
    low = np.ldexp(1.0, -bits)
    out = ah @ bh + (al @ bh) * low + (ah @ bl) * low
    return out / (sa * sb)
