"""Channel normalization for generation training.

Center and scale statistics are estimated from random entries of the
center and scale channels across a dataset, then applied so each channel
has zero mean and unit max norm.  Grid values are left untouched; they are
already order-one for unit-cube shapes.  Denormalization inverts exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mosaic import MosaicSdf


@dataclass(frozen=True)
class ChannelStats:
    p_mean: np.ndarray    # (3,) per-axis center mean
    p_scale: float        # max |centered center entry|
    s_mean: float
    s_scale: float

    def __post_init__(self):
        object.__setattr__(self, "p_mean", np.asarray(self.p_mean, dtype=np.float64))
        if self.p_mean.shape != (3,):
            raise ValueError(f"p_mean must be (3,), got {self.p_mean.shape}")
        if self.p_scale <= 0 or self.s_scale <= 0:
            raise ValueError("channel max norms must be positive")


def estimate_stats(dataset: list[MosaicSdf], sample_count: int = 50_000,
                   seed: int = 0) -> ChannelStats:
    """Channel statistics from ``sample_count`` random entries per channel."""
    if not dataset:
        raise ValueError("need at least one representation")
    rng = np.random.default_rng(seed)
    p_all = np.concatenate([x.centers.astype(np.float64) for x in dataset])
    s_all = np.concatenate([x.scales.astype(np.float64) for x in dataset])
    p_rows = p_all[rng.integers(0, len(p_all), min(sample_count, len(p_all) * 4))]
    s_pick = s_all[rng.integers(0, len(s_all), min(sample_count, len(s_all) * 4))]
    p_mean = p_rows.mean(axis=0)
    p_scale = float(np.abs(p_rows - p_mean).max())
    s_mean = float(s_pick.mean())
    s_scale = float(np.abs(s_pick - s_mean).max())
    if p_scale <= 0.0:
        p_scale = 1.0   # degenerate channel: all entries identical
    if s_scale <= 0.0:
        s_scale = 1.0
    return ChannelStats(p_mean, p_scale, s_mean, s_scale)


def normalize(x: MosaicSdf, stats: ChannelStats) -> MosaicSdf:
    """Normalized banks are training tensors; they evaluate only after denormalize."""
    p = (x.centers.astype(np.float64) - stats.p_mean) / stats.p_scale
    s = (x.scales.astype(np.float64) - stats.s_mean) / stats.s_scale
    return MosaicSdf(p, s, x.values)


def denormalize(x: MosaicSdf, stats: ChannelStats) -> MosaicSdf:
    p = x.centers.astype(np.float64) * stats.p_scale + stats.p_mean
    s = x.scales.astype(np.float64) * stats.s_scale + stats.s_mean
    return MosaicSdf(p, s, x.values)


def normalize_channels(dataset: list[MosaicSdf], sample_count: int = 50_000,
                       seed: int = 0) -> tuple[list[MosaicSdf], ChannelStats]:
    stats = estimate_stats(dataset, sample_count, seed)
    return [normalize(x, stats) for x in dataset], stats
