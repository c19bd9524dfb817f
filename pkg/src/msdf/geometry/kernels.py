"""Compiled query kernels: BVH closest-point, winding number, box distances.

All kernels are deterministic per query point, independent of batch
composition and thread count; parallelism is only across queries.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import njit, prange

# workqueue is always available and keeps single-core boxes warning-free
numba.config.THREADING_LAYER = "workqueue"

STACK_DEPTH = 128

# closest-feature codes
FEAT_FACE = 0
FEAT_VERT_A = 1
FEAT_VERT_B = 2
FEAT_VERT_C = 3
FEAT_EDGE_AB = 4
FEAT_EDGE_BC = 5
FEAT_EDGE_CA = 6


def set_thread_cap(n: int) -> None:
    """Cap kernel parallelism at ``n`` threads (never below one)."""
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


@njit(cache=True, inline="always")
def _closest_on_triangle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Closest point to p on triangle abc; returns (x, y, z, feature_code).

    Region classification follows the standard Voronoi-region walk over the
    triangle's vertex, edge, and face regions.
    """
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az, FEAT_VERT_A

    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz, FEAT_VERT_B

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        denom = d1 - d3
        v = d1 / denom if denom != 0.0 else 0.0
        return ax + v * abx, ay + v * aby, az + v * abz, FEAT_EDGE_AB

    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz, FEAT_VERT_C

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        denom = d2 - d6
        w = d2 / denom if denom != 0.0 else 0.0
        return ax + w * acx, ay + w * acy, az + w * acz, FEAT_EDGE_CA

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        denom = (d4 - d3) + (d5 - d6)
        w = (d4 - d3) / denom if denom != 0.0 else 0.0
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz), FEAT_EDGE_BC

    denom = va + vb + vc
    if denom != 0.0:
        v = vb / denom
        w = vc / denom
    else:  # degenerate (zero-area) triangle: fall back to vertex a
        return ax, ay, az, FEAT_VERT_A
    return ax + v * abx + w * acx, ay + v * aby + w * acy, az + v * abz + w * acz, FEAT_FACE


@njit(cache=True, inline="always")
def _box_dist2(px, py, pz, lox, loy, loz, hix, hiy, hiz):
    dx = max(lox - px, 0.0, px - hix)
    dy = max(loy - py, 0.0, py - hiy)
    dz = max(loz - pz, 0.0, pz - hiz)
    return dx * dx + dy * dy + dz * dz


@njit(cache=True, parallel=True)
def bvh_closest(points, box_lo, box_hi, left, right, start, count, tri_pts,
                out_d2, out_tri, out_feat, out_cp):
    """Closest surface point for each query.

    ``tri_pts`` is (F,3,3) with triangles already ordered so each leaf's
    range is contiguous.  Outputs: squared distance, triangle index into
    ``tri_pts``, feature code, and the closest point itself.  Ties keep the
    first triangle encountered in traversal order, which is deterministic.
    """
    nq = points.shape[0]
    for q in prange(nq):
        px, py, pz = points[q, 0], points[q, 1], points[q, 2]
        best_d2 = np.inf
        best_tri = -1
        best_feat = 0
        bcx = 0.0
        bcy = 0.0
        bcz = 0.0
        stack = np.empty(STACK_DEPTH, dtype=np.int32)
        top = 0
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            if _box_dist2(px, py, pz, box_lo[node, 0], box_lo[node, 1], box_lo[node, 2],
                          box_hi[node, 0], box_hi[node, 1], box_hi[node, 2]) >= best_d2:
                continue
            if count[node] > 0:
                for t in range(start[node], start[node] + count[node]):
                    cx_, cy_, cz_, feat = _closest_on_triangle(
                        px, py, pz,
                        tri_pts[t, 0, 0], tri_pts[t, 0, 1], tri_pts[t, 0, 2],
                        tri_pts[t, 1, 0], tri_pts[t, 1, 1], tri_pts[t, 1, 2],
                        tri_pts[t, 2, 0], tri_pts[t, 2, 1], tri_pts[t, 2, 2])
                    dx, dy, dz = px - cx_, py - cy_, pz - cz_
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best_d2:
                        best_d2 = d2
                        best_tri = t
                        best_feat = feat
                        bcx, bcy, bcz = cx_, cy_, cz_
            else:
                a = left[node]
                b = right[node]
                da = _box_dist2(px, py, pz, box_lo[a, 0], box_lo[a, 1], box_lo[a, 2],
                                box_hi[a, 0], box_hi[a, 1], box_hi[a, 2])
                db = _box_dist2(px, py, pz, box_lo[b, 0], box_lo[b, 1], box_lo[b, 2],
                                box_hi[b, 0], box_hi[b, 1], box_hi[b, 2])
                # push the farther child first so the nearer is explored first
                if da <= db:
                    stack[top] = b; top += 1
                    stack[top] = a; top += 1
                else:
                    stack[top] = a; top += 1
                    stack[top] = b; top += 1
        out_d2[q] = best_d2
        out_tri[q] = best_tri
        out_feat[q] = best_feat
        out_cp[q, 0] = bcx
        out_cp[q, 1] = bcy
        out_cp[q, 2] = bcz


@njit(cache=True, parallel=True)
def winding_numbers(points, tri_pts, out_w):
    """Generalized winding number via summed signed solid angles."""
    nq = points.shape[0]
    nf = tri_pts.shape[0]
    inv4pi = 1.0 / (4.0 * np.pi)
    for q in prange(nq):
        px, py, pz = points[q, 0], points[q, 1], points[q, 2]
        total = 0.0
        for t in range(nf):
            ax, ay, az = tri_pts[t, 0, 0] - px, tri_pts[t, 0, 1] - py, tri_pts[t, 0, 2] - pz
            bx, by, bz = tri_pts[t, 1, 0] - px, tri_pts[t, 1, 1] - py, tri_pts[t, 1, 2] - pz
            cx, cy, cz = tri_pts[t, 2, 0] - px, tri_pts[t, 2, 1] - py, tri_pts[t, 2, 2] - pz
            la = np.sqrt(ax * ax + ay * ay + az * az)
            lb = np.sqrt(bx * bx + by * by + bz * bz)
            lc = np.sqrt(cx * cx + cy * cy + cz * cz)
            det = (ax * (by * cz - bz * cy)
                   - ay * (bx * cz - bz * cx)
                   + az * (bx * cy - by * cx))
            denom = (la * lb * lc
                     + (ax * bx + ay * by + az * bz) * lc
                     + (bx * cx + by * cy + bz * cz) * la
                     + (cx * ax + cy * ay + cz * az) * lb)
            total += 2.0 * np.arctan2(det, denom)
        out_w[q] = total * inv4pi


@njit(cache=True, parallel=True)
def min_chebyshev_excess(points, centers, scales, out, out_idx):
    """out[q] = min_i ( max_axis |points[q] - centers[i]| - scales[i] ).

    out_idx[q] gets the first minimizing i (the nearest ball).
    """
    nq = points.shape[0]
    n = centers.shape[0]
    for q in prange(nq):
        px, py, pz = points[q, 0], points[q, 1], points[q, 2]
        best = np.inf
        best_i = 0
        for i in range(n):
            dx = abs(px - centers[i, 0])
            dy = abs(py - centers[i, 1])
            dz = abs(pz - centers[i, 2])
            d = dx
            if dy > d:
                d = dy
            if dz > d:
                d = dz
            d -= scales[i]
            if d < best:
                best = d
                best_i = i
        out[q] = best
        out_idx[q] = best_i


@njit(cache=True, parallel=True)
def max_min_chebyshev(points, centers, out):
    """out[q] = min_i max_axis |points[q] - centers[i]| (covering radius integrand)."""
    nq = points.shape[0]
    n = centers.shape[0]
    for q in prange(nq):
        px, py, pz = points[q, 0], points[q, 1], points[q, 2]
        best = np.inf
        for i in range(n):
            dx = abs(px - centers[i, 0])
            dy = abs(py - centers[i, 1])
            dz = abs(pz - centers[i, 2])
            d = dx
            if dy > d:
                d = dy
            if dz > d:
                d = dz
            if d < best:
                best = d
        out[q] = best
