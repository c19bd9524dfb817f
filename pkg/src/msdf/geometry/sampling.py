"""Surface point sampling and farthest point selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh


@dataclass
class SurfaceSamples:
    """Points on a mesh surface with their source faces and outward normals."""

    points: np.ndarray   # (N,3)
    normals: np.ndarray  # (N,3) unit, from the sampled face
    face_index: np.ndarray  # (N,)


def sample_surface(mesh: TriangleMesh, count: int, seed: int) -> SurfaceSamples:
    """Area-uniform surface samples.

    Faces are drawn in proportion to area (zero-area faces are never drawn),
    then a uniform barycentric point is taken on each drawn face.
    """
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas)
    face_idx = np.searchsorted(cdf, rng.random(count) * total, side="right")
    face_idx = np.minimum(face_idx, len(areas) - 1)
    a, b, c = mesh.triangle_corners()
    a, b, c = a[face_idx], b[face_idx], c[face_idx]
    # sqrt trick: uniform density over each triangle
    r1 = np.sqrt(rng.random(count))[:, None]
    r2 = rng.random(count)[:, None]
    pts = a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
    return SurfaceSamples(pts, mesh.face_normals()[face_idx], face_idx)


def sample_near_surface(mesh: TriangleMesh, count: int, variance: float, seed: int) -> np.ndarray:
    """Surface samples displaced by isotropic Gaussian noise of the given variance."""
    if variance < 0.0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    surf = sample_surface(mesh, count, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E3779B9]))
    return surf.points + rng.normal(0.0, np.sqrt(variance), size=(count, 3))


def farthest_point_sample(points: np.ndarray, count: int, seed: int) -> np.ndarray:
    """Greedy max-min (farthest point) subset selection.

    Starts from a seed-chosen point, then repeatedly adds the point whose
    Euclidean distance to the already-selected set is largest.  Returns the
    selected indices in selection order.  Ties keep the lowest index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 0 < count <= n:
        raise ValueError(f"count must be in [1, {n}], got {count}")
    rng = np.random.default_rng(seed)
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = rng.integers(n)
    dists = np.linalg.norm(points - points[chosen[0]], axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(dists))
        chosen[i] = nxt
        np.minimum(dists, np.linalg.norm(points - points[nxt], axis=1), out=dists)
    return chosen
