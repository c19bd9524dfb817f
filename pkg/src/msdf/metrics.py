"""Point cloud distances and generative set-to-set metrics.

Chamfer distance uses the squared-distance convention, averaged per
direction so the value converges as sample counts grow.  Earth mover's
distance is the exact minimum-cost bijection under Euclidean ground cost
(Hungarian assignment), summed over matched pairs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

EMD_MAX_POINTS = 512


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Chamfer distance: mean squared nearest-neighbor distance,
    one term per direction."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"point sets must share dimensionality, got {a.shape} and {b.shape}")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance of an empty point set")
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def emd(a: np.ndarray, b: np.ndarray) -> float:
    """Exact earth mover's distance between same-size clouds (N <= 512)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"EMD needs same-size clouds, got {a.shape} and {b.shape}")
    if len(a) > EMD_MAX_POINTS:
        raise ValueError(f"EMD limited to {EMD_MAX_POINTS} points, got {len(a)}")
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


@dataclass
class SetMetrics:
    coverage: float
    mmd: float
    one_nna: float
    distance_kind: str
    num_generated: int
    num_reference: int


def _pairwise(clouds_a: list[np.ndarray], clouds_b: list[np.ndarray], dist) -> np.ndarray:
    out = np.empty((len(clouds_a), len(clouds_b)))
    for i, x in enumerate(clouds_a):
        for j, y in enumerate(clouds_b):
            out[i, j] = dist(x, y)
    return out


def set_metrics(generated: list[np.ndarray], reference: list[np.ndarray],
                distance: str = "chamfer") -> SetMetrics:
    """Coverage, minimum matching distance, and 1-NN two-sample accuracy.

    Coverage: fraction of reference clouds that are the closest reference to
    at least one generated cloud.  MMD: mean over reference clouds of the
    distance to the closest generated cloud.  1-NNA: leave-one-out 1-NN
    classification accuracy over the union, labeling each cloud by its set;
    50% means the sets are indistinguishable.
    """
    if distance == "chamfer":
        dist = chamfer
    elif distance == "emd":
        dist = emd
    else:
        raise ValueError(f"unknown distance {distance!r}")
    if not generated or not reference:
        raise ValueError("set metrics need non-empty cloud lists")

    d_gr = _pairwise(generated, reference, dist)
    if not d_gr.any():
        warnings.warn("all generated-to-reference distances are zero; metrics are degenerate")

    matched = np.argmin(d_gr, axis=1)
    coverage = len(np.unique(matched)) / len(reference)
    mmd = float(d_gr.min(axis=0).mean())

    d_gg = _pairwise(generated, generated, dist)
    d_rr = _pairwise(reference, reference, dist)
    ng, nr = len(generated), len(reference)
    union = np.empty((ng + nr, ng + nr))
    union[:ng, :ng] = d_gg
    union[:ng, ng:] = d_gr
    union[ng:, :ng] = d_gr.T
    union[ng:, ng:] = d_rr
    np.fill_diagonal(union, np.inf)
    nn = np.argmin(union, axis=1)
    labels = np.concatenate([np.zeros(ng, dtype=np.int64), np.ones(nr, dtype=np.int64)])
    one_nna = float(np.mean(labels[nn] == labels))

    return SetMetrics(coverage, mmd, one_nna, distance, ng, nr)
