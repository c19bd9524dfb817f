"""Bank of local SDF grids blended into one continuous field.

A shape is represented by n small grids, each with a center p_i, a scale
s_i, and k^3 signed distance values V_i sampled on a fixed lattice spanning
[-1,1]^3 in the grid's local frame.  At a query point x, every grid whose
open Chebyshev ball B(p_i, s_i) contains x contributes its trilinear
interpolation at local coordinates (x - p_i) / s_i, weighted by the hat
function relu(1 - ||(x - p_i)/s_i||_inf) normalized over the contributors.
The weights form a partition of unity on the support union; outside it the
field falls back to the Chebyshev excess min_i(||x - p_i||_inf - s_i),
signed by the nearest grid's boundary value so uncovered space keeps the
inside/outside classification of the surface it sits behind.

Per-point contributions are reduced with order-invariant sums, so permuting
the rows of a representation changes nothing, bit for bit.

Storage is float32 (the serialization format's precision); all evaluation
math runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._reduce import invariant_segment_sum
from .geometry.kernels import max_min_chebyshev, min_chebyshev_excess
from .geometry.oracle import SdfOracle
from .geometry.sampling import farthest_point_sample, sample_surface


def lattice_axis(k: int) -> np.ndarray:
    """Axis node coordinates (2j - k - 1)/(k - 1) for j = 1..k: evenly spaced over [-1,1]."""
    if k < 2:
        raise ValueError(f"lattice needs k >= 2, got {k}")
    j = np.arange(1, k + 1, dtype=np.float64)
    return (2.0 * j - k - 1.0) / (k - 1.0)


def lattice_points(k: int) -> np.ndarray:
    """(k^3, 3) lattice nodes ordered to match the value layout (x fastest)."""
    g = lattice_axis(k)
    flat = np.arange(k ** 3)
    return np.stack([g[flat % k], g[(flat // k) % k], g[flat // (k * k)]], axis=1)


@dataclass
class MosaicSdf:
    """n local grids: ``centers`` (n,3), ``scales`` (n,), ``values`` (n,k,k,k).

    ``values[i, iz, iy, ix]`` holds the sample at local node
    (axis[ix], axis[iy], axis[iz]); flattening the last three axes is
    therefore x-fastest.  Treated as immutable; evaluation caches derived
    structures on first use.
    """

    centers: np.ndarray
    scales: np.ndarray
    values: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float32)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float32)
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        n = self.centers.shape[0]
        if self.centers.shape != (n, 3):
            raise ValueError(f"centers must be (n,3), got {self.centers.shape}")
        if self.scales.shape != (n,):
            raise ValueError(f"scales must be (n,), got {self.scales.shape}")
        k = self.values.shape[1] if self.values.ndim == 4 else 0
        if self.values.shape != (n, k, k, k) or k < 2:
            raise ValueError(f"values must be (n,k,k,k) with k >= 2, got {self.values.shape}")
        if not (np.isfinite(self.centers).all() and np.isfinite(self.scales).all()
                and np.isfinite(self.values).all()):
            raise ValueError("non-finite representation parameters")

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @property
    def param_count(self) -> int:
        return self.n * (4 + self.k ** 3)

    # -- flat matrix view (generation feeds on this) ------------------------

    def to_matrix(self) -> np.ndarray:
        """(n, 4 + k^3) float32 rows [p, s, V-flattened-x-fastest]."""
        return np.concatenate([self.centers,
                               self.scales[:, None],
                               self.values.reshape(self.n, -1)], axis=1)

    @classmethod
    def from_matrix(cls, mat: np.ndarray, k: int) -> "MosaicSdf":
        mat = np.asarray(mat)
        if mat.ndim != 2 or mat.shape[1] != 4 + k ** 3:
            raise ValueError(f"matrix must be (n, {4 + k**3}) for k={k}, got {mat.shape}")
        return cls(mat[:, :3], mat[:, 3], mat[:, 4:].reshape(-1, k, k, k))

    # -- evaluation ----------------------------------------------------------

    def _f64(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if "f64" not in self._cache:
            if (self.scales <= 0).any():
                raise ValueError("evaluation requires positive scales; "
                                 "denormalize channel-normalized representations first")
            self._cache["f64"] = (self.centers.astype(np.float64),
                                  self.scales.astype(np.float64),
                                  self.values.astype(np.float64).reshape(self.n, -1))
        return self._cache["f64"]

    def _index(self) -> "BallIndex":
        if "index" not in self._cache:
            p, s, _ = self._f64()
            self._cache["index"] = BallIndex(p, s)
        return self._cache["index"]

    def eval(self, points: np.ndarray) -> np.ndarray:
        p, s, v = self._f64()
        return eval_field(p, s, v, self.k, np.asarray(points, dtype=np.float64), self._index())

    def eval_gradient(self, points: np.ndarray) -> np.ndarray:
        p, s, v = self._f64()
        return eval_field_gradient(p, s, v, self.k, np.asarray(points, dtype=np.float64),
                                   self._index())

    def weight(self, i: int, points: np.ndarray) -> np.ndarray:
        """Normalized blend weight of grid ``i`` at each point (zero off-support)."""
        if not 0 <= i < self.n:
            raise IndexError(f"grid index {i} out of range [0, {self.n})")
        p, s, _ = self._f64()
        pts = np.asarray(points, dtype=np.float64)
        pt_idx, grid_idx, starts = self._index().query(pts)
        u = (pts[pt_idx] - p[grid_idx]) / s[grid_idx, None]
        wbar = 1.0 - np.abs(u).max(axis=1)
        denom = invariant_segment_sum(wbar, starts)
        own = np.where(grid_idx == i, wbar, 0.0)
        numer = invariant_segment_sum(own, starts)
        out = np.zeros(len(pts))
        covered = denom > 0.0
        out[covered] = numer[covered] / denom[covered]
        return out

    def support_contains(self, points: np.ndarray) -> np.ndarray:
        """True where some open ball B_inf(p_i, s_i) contains the point."""
        p, s, _ = self._f64()
        pts = np.ascontiguousarray(points, dtype=np.float64)
        out = np.empty(len(pts))
        min_chebyshev_excess(pts, p, s, out, np.empty(len(pts), dtype=np.int64))
        return out < 0.0


class BallIndex:
    """Coarse uniform grid over the Chebyshev balls for candidate lookup.

    ``query`` returns (point_idx, grid_idx, starts): candidate pairs that
    passed the exact open-ball test, sorted by point, plus each point's
    first pair offset (segments may be empty).
    """

    def __init__(self, centers: np.ndarray, scales: np.ndarray, max_cells: int = 48):
        self.centers = centers
        self.scales = scales
        lo = (centers - scales[:, None]).min(axis=0)
        hi = (centers + scales[:, None]).max(axis=0)
        extent = float((hi - lo).max())
        if extent <= 0.0:
            extent = 1.0
        target = 2.0 * float(np.median(scales))
        cells = int(np.clip(extent / max(target, 1e-9), 1, max_cells))
        self.lo = lo
        self.cell = extent / cells
        self.cells = cells
        i0 = np.clip(((centers - scales[:, None]) - lo) / self.cell, 0, cells - 1).astype(np.int64)
        i1 = np.clip(((centers + scales[:, None]) - lo) / self.cell, 0, cells - 1).astype(np.int64)
        spans = i1 - i0 + 1
        counts = spans.prod(axis=1)
        total = int(counts.sum())
        ball_of = np.repeat(np.arange(len(centers)), counts)
        offset = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        sx = np.repeat(spans[:, 0], counts)
        sy = np.repeat(spans[:, 1], counts)
        sz = np.repeat(spans[:, 2], counts)
        dz = offset % sz
        dy = (offset // sz) % sy
        dx = offset // (sz * sy)
        cx = np.repeat(i0[:, 0], counts) + dx
        cy = np.repeat(i0[:, 1], counts) + dy
        cz = np.repeat(i0[:, 2], counts) + dz
        cid = (cx * cells + cy) * cells + cz
        order = np.argsort(cid, kind="stable")
        self._cell_ids = cid[order]
        self._cell_balls = ball_of[order]

    def query(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        q = np.clip((points - self.lo) / self.cell, 0, self.cells - 1).astype(np.int64)
        cid = (q[:, 0] * self.cells + q[:, 1]) * self.cells + q[:, 2]
        lo = np.searchsorted(self._cell_ids, cid, side="left")
        hi = np.searchsorted(self._cell_ids, cid, side="right")
        counts = hi - lo
        total = int(counts.sum())
        pt_idx = np.repeat(np.arange(len(points)), counts)
        flat = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts) + np.repeat(lo, counts)
        grid_idx = self._cell_balls[flat]
        keep = (np.abs(points[pt_idx] - self.centers[grid_idx]).max(axis=1)
                < self.scales[grid_idx])
        pt_idx = pt_idx[keep]
        grid_idx = grid_idx[keep]
        kept_per_point = np.zeros(len(points), dtype=np.int64)
        np.add.at(kept_per_point, pt_idx, 1)
        starts = np.concatenate([[0], np.cumsum(kept_per_point)[:-1]])
        return pt_idx, grid_idx, starts


def _trilinear(values_flat: np.ndarray, k: int, grid_idx: np.ndarray, u: np.ndarray):
    """Corner gather for trilinear interpolation at local coordinates u.

    Returns (v8, cw, axis_weights, t) where v8 (P,8) are corner values in
    bit order c = dx + 2*dy + 4*dz and cw (P,8) the matching weights.
    """
    h = 2.0 / (k - 1)
    pos = (u + 1.0) / h
    j = np.clip(np.floor(pos), 0, k - 2).astype(np.int64)
    t = pos - j
    base = (j[:, 2] * k + j[:, 1]) * k + j[:, 0]
    corner_off = np.array([(dz * k + dy) * k + dx
                           for c in range(8)
                           for dx, dy, dz in [(c & 1, (c >> 1) & 1, c >> 2)]])
    v8 = values_flat[grid_idx[:, None], base[:, None] + corner_off[None, :]]
    wx = np.stack([1.0 - t[:, 0], t[:, 0]], axis=1)
    wy = np.stack([1.0 - t[:, 1], t[:, 1]], axis=1)
    wz = np.stack([1.0 - t[:, 2], t[:, 2]], axis=1)
    c = np.arange(8)
    cw = wx[:, c & 1] * wy[:, (c >> 1) & 1] * wz[:, c >> 2]
    return v8, cw, (wx, wy, wz), t


_SIGN = np.array([-1.0, 1.0])


def _interp_du(v8: np.ndarray, axis_weights, k: int) -> np.ndarray:
    """(P,3) derivative of the trilinear interpolation w.r.t. local u."""
    wx, wy, wz = axis_weights
    h = 2.0 / (k - 1)
    c = np.arange(8)
    dx_w = _SIGN[c & 1] * wy[:, (c >> 1) & 1] * wz[:, c >> 2]
    dy_w = wx[:, c & 1] * _SIGN[(c >> 1) & 1] * wz[:, c >> 2]
    dz_w = wx[:, c & 1] * wy[:, (c >> 1) & 1] * _SIGN[c >> 2]
    return np.stack([(v8 * dx_w).sum(axis=1),
                     (v8 * dy_w).sum(axis=1),
                     (v8 * dz_w).sum(axis=1)], axis=1) / h


def _pairs(centers, scales, points, index):
    if index is None:
        index = BallIndex(centers, scales)
    return index.query(points)


def _fallback_sign(centers, scales, values_flat, k, sub):
    """(excess, nearest grid, sign) of the off-support fallback at sub.

    The magnitude is the Chebyshev excess to the nearest ball; the sign is
    taken from that grid's interpolant at the clamped local coordinates, so
    uncovered space deep inside a closed surface reads negative instead of
    producing a spurious zero crossing at the support boundary.
    """
    fb = np.empty(len(sub))
    gi = np.empty(len(sub), dtype=np.int64)
    min_chebyshev_excess(np.ascontiguousarray(sub), centers, scales, fb, gi)
    u = np.clip((sub - centers[gi]) / scales[gi, None], -1.0, 1.0)
    v8, cw, _, _ = _trilinear(values_flat, k, gi, u)
    anchor = (v8 * cw).sum(axis=1)
    return fb, gi, np.where(anchor < 0.0, -1.0, 1.0)


def eval_field(centers: np.ndarray, scales: np.ndarray, values_flat: np.ndarray, k: int,
               points: np.ndarray, index: BallIndex | None = None) -> np.ndarray:
    """Blended field at each point; signed Chebyshev-excess fallback off-support."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"points must be (N,3), got {points.shape}")
    if len(points) == 0:
        return np.zeros(0)
    pt_idx, grid_idx, starts = _pairs(centers, scales, points, index)
    u = (points[pt_idx] - centers[grid_idx]) / scales[grid_idx, None]
    wbar = 1.0 - np.abs(u).max(axis=1)
    v8, cw, _, _ = _trilinear(values_flat, k, grid_idx, u)
    interp = (v8 * cw).sum(axis=1)
    denom = invariant_segment_sum(wbar, starts)
    numer = invariant_segment_sum(wbar * interp, starts)
    out = np.empty(len(points))
    covered = denom > 0.0
    out[covered] = numer[covered] / denom[covered]
    if (~covered).any():
        fb, _, sgn = _fallback_sign(centers, scales, values_flat, k, points[~covered])
        out[~covered] = sgn * fb
    return out


def eval_field_gradient(centers: np.ndarray, scales: np.ndarray, values_flat: np.ndarray,
                        k: int, points: np.ndarray,
                        index: BallIndex | None = None) -> np.ndarray:
    """Spatial gradient of the blended field.

    On-support this differentiates the weight normalization and the
    interpolants; at the hat function's Chebyshev-norm kinks the zero-side
    (subgradient) convention is used via the first maximizing axis.
    Off-support it is the signed unit direction of the fallback's active axis.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return np.zeros((0, 3))
    pt_idx, grid_idx, starts = _pairs(centers, scales, points, index)
    s = scales[grid_idx]
    u = (points[pt_idx] - centers[grid_idx]) / s[:, None]
    absu = np.abs(u)
    m_axis = absu.argmax(axis=1)
    rows = np.arange(len(u))
    wbar = 1.0 - absu[rows, m_axis]
    sigma = np.sign(u[rows, m_axis])
    grad_wbar = np.zeros_like(u)
    grad_wbar[rows, m_axis] = -sigma / s  # spatial derivative of the hat
    v8, cw, axis_w, _ = _trilinear(values_flat, k, grid_idx, u)
    interp = (v8 * cw).sum(axis=1)
    grad_interp = _interp_du(v8, axis_w, k) / s[:, None]

    denom = invariant_segment_sum(wbar, starts)
    numer = invariant_segment_sum(wbar * interp, starts)
    s_vec = np.stack([invariant_segment_sum(grad_wbar[:, a] * interp + wbar * grad_interp[:, a],
                                            starts) for a in range(3)], axis=1)
    t_vec = np.stack([invariant_segment_sum(grad_wbar[:, a], starts) for a in range(3)], axis=1)

    out = np.zeros((len(points), 3))
    covered = denom > 0.0
    w = denom[covered, None]
    f = (numer[covered] / denom[covered])[:, None]
    out[covered] = s_vec[covered] / w - f * t_vec[covered] / w
    if (~covered).any():
        sub = points[~covered]
        _, gi, field_sgn = _fallback_sign(centers, scales, values_flat, k, sub)
        diff = np.abs(sub - centers[gi])
        ax = diff.argmax(axis=1)
        sgn = np.sign(sub[np.arange(len(sub)), ax] - centers[gi, ax])
        g = np.zeros((len(sub), 3))
        g[np.arange(len(sub)), ax] = np.where(sgn == 0.0, 1.0, sgn) * field_sgn
        out[~covered] = g
    return out


def covering_scale(centers: np.ndarray, surface_points: np.ndarray,
                   margin: float = 0.01, floor: float = 1e-4) -> float:
    """Shared scale covering every surface sample, with a safety margin.

    Takes the max over samples of the Chebyshev distance to the nearest
    center, inflates it by ``margin`` (relative), and adds ``floor`` so the
    scale stays positive even when centers coincide with the samples.
    """
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    surface_points = np.ascontiguousarray(surface_points, dtype=np.float64)
    if len(surface_points) == 0:
        raise ValueError("covering_scale needs at least one surface sample")
    out = np.empty(len(surface_points))
    max_min_chebyshev(surface_points, centers, out)
    return float(out.max()) * (1.0 + margin) + floor


def initialize(oracle: SdfOracle, n: int, k: int, seed: int,
               fps_samples: int = 100_000, cover_samples: int = 250_000,
               margin: float = 0.01) -> MosaicSdf:
    """Fit-free construction: FPS centers, shared covering scale, sampled values.

    Centers are farthest-point-sampled from a dense surface sampling; the
    shared scale is the covering radius over an independent dense sampling
    plus the margin; grid values are exact oracle distances at the lattice
    nodes.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 grids, got {n}")
    surf = sample_surface(oracle.mesh, max(fps_samples, n), seed)
    idx = farthest_point_sample(surf.points, n, seed)
    centers = surf.points[idx]
    cover = sample_surface(oracle.mesh, cover_samples, seed + 7_919).points
    s = covering_scale(centers, cover, margin)
    scales = np.full(n, s)
    nodes = centers[:, None, :] + s * lattice_points(k)[None, :, :]
    values = oracle.signed_distance(nodes.reshape(-1, 3)).reshape(n, k, k, k)
    return MosaicSdf(centers, scales, values)


def sample_support(x: MosaicSdf, count: int, seed: int) -> np.ndarray:
    """Uniform-ish points inside the support union (grid choice uniform)."""
    rng = np.random.default_rng(seed)
    gi = rng.integers(0, x.n, count)
    offs = rng.uniform(-1.0, 1.0, (count, 3)) * x.scales.astype(np.float64)[gi, None]
    return x.centers.astype(np.float64)[gi] + offs * (1.0 - 1e-12)
