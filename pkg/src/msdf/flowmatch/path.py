"""Straight-line probability path between noise and data.

X_t = (1 - rho*t) X_0 + t X_1 with rho = 1 - sigma, so the path starts at
pure noise and ends at the data point plus sigma times the noise.  Its time
derivative X_1 - rho*X_0 is constant in t and serves as the regression
target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CondOtPath:
    sigma: float = 1e-5

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise ValueError(f"sigma must be in (0, 1), got {self.sigma}")

    @property
    def rho(self) -> float:
        return 1.0 - self.sigma


def sample_path(path: CondOtPath, x0: np.ndarray, x1: np.ndarray,
                t: float) -> tuple[np.ndarray, np.ndarray]:
    """Point on the path and its (constant) derivative, in float64."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"endpoint shapes differ: {x0.shape} vs {x1.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    rho = path.rho
    xt = (1.0 - rho * t) * x0 + t * x1
    target = x1 - rho * x0
    return xt, target
