"""Exact signed distance queries against a watertight triangle mesh.

Distance is computed with a BVH over the triangles (median split on the
longest centroid axis).  Sign comes from the angle-weighted pseudonormal of
the closest feature (face, edge, or vertex): the query is outside when the
vector from the closest point to the query aligns with that pseudonormal.
A generalized-winding-number mode is available as a fallback for meshes
whose pseudonormals are unreliable.

The oracle is immutable once built; query batches of any size are safe to
issue concurrently.
"""

from __future__ import annotations

import numpy as np

from .kernels import bvh_closest, winding_numbers
from .mesh import TriangleMesh

_LEAF_SIZE = 8


class _Bvh:
    """Flat-array BVH: leaves hold contiguous ranges of reordered triangles."""

    def __init__(self, tri_pts: np.ndarray):
        nf = tri_pts.shape[0]
        tri_lo = tri_pts.min(axis=1)
        tri_hi = tri_pts.max(axis=1)
        centroids = tri_pts.mean(axis=1)

        box_lo: list[np.ndarray] = []
        box_hi: list[np.ndarray] = []
        left: list[int] = []
        right: list[int] = []
        start: list[int] = []
        count: list[int] = []
        tri_order = np.empty(nf, dtype=np.int64)
        order_pos = 0

        stack: list[tuple[np.ndarray, int, int]] = [(np.arange(nf), -1, 0)]
        while stack:
            idx, parent, side = stack.pop()
            node = len(left)
            box_lo.append(tri_lo[idx].min(axis=0))
            box_hi.append(tri_hi[idx].max(axis=0))
            if parent >= 0:
                if side == 0:
                    left[parent] = node
                else:
                    right[parent] = node
            if len(idx) <= _LEAF_SIZE:
                left.append(-1)
                right.append(-1)
                start.append(order_pos)
                count.append(len(idx))
                tri_order[order_pos:order_pos + len(idx)] = idx
                order_pos += len(idx)
            else:
                cen = centroids[idx]
                axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
                half = len(idx) // 2
                part = np.argpartition(cen[:, axis], half)
                left.append(-2)
                right.append(-2)
                start.append(-1)
                count.append(0)
                stack.append((idx[part[half:]], node, 1))
                stack.append((idx[part[:half]], node, 0))

        self.box_lo = np.ascontiguousarray(box_lo, dtype=np.float64)
        self.box_hi = np.ascontiguousarray(box_hi, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.start = np.asarray(start, dtype=np.int32)
        self.count = np.asarray(count, dtype=np.int32)
        self.tri_order = tri_order
        self.tri_pts = np.ascontiguousarray(tri_pts[tri_order])


def _angle_weighted_vertex_normals(mesh: TriangleMesh) -> np.ndarray:
    a, b, c = mesh.triangle_corners()
    fn = mesh.face_normals()
    vn = np.zeros_like(mesh.vertices)
    corners = (a, b, c)
    for j in range(3):
        p = corners[j]
        e1 = corners[(j + 1) % 3] - p
        e2 = corners[(j + 2) % 3] - p
        n1 = np.linalg.norm(e1, axis=1)
        n2 = np.linalg.norm(e2, axis=1)
        denom = np.where((n1 > 0) & (n2 > 0), n1 * n2, 1.0)
        cosang = np.clip(np.einsum("ij,ij->i", e1, e2) / denom, -1.0, 1.0)
        ang = np.arccos(cosang)
        np.add.at(vn, mesh.faces[:, j], fn * ang[:, None])
    norm = np.linalg.norm(vn, axis=1, keepdims=True)
    return vn / np.where(norm == 0.0, 1.0, norm)


def _edge_pseudonormals(mesh: TriangleMesh) -> np.ndarray:
    """(F,3,3): pseudonormal for edge slots ab, bc, ca of each face."""
    fn = mesh.face_normals()
    edge_sum: dict[tuple[int, int], np.ndarray] = {}
    faces = mesh.faces
    for f in range(len(faces)):
        tri = faces[f]
        for e in range(3):
            u, w = int(tri[e]), int(tri[(e + 1) % 3])
            key = (u, w) if u < w else (w, u)
            if key in edge_sum:
                edge_sum[key] = edge_sum[key] + fn[f]
            else:
                edge_sum[key] = fn[f].copy()
    en = np.zeros((len(faces), 3, 3))
    for f in range(len(faces)):
        tri = faces[f]
        for e in range(3):
            u, w = int(tri[e]), int(tri[(e + 1) % 3])
            key = (u, w) if u < w else (w, u)
            en[f, e] = edge_sum[key]
    norm = np.linalg.norm(en, axis=2, keepdims=True)
    return en / np.where(norm == 0.0, 1.0, norm)


class SdfOracle:
    """Signed distance, gradient, and closest-point queries for one mesh.

    ``sign_mode`` is ``"pseudonormal"`` (default) or ``"winding"``.  The
    winding mode sums exact solid angles over all triangles per query, which
    is robust but linear in the face count.
    """

    def __init__(self, mesh: TriangleMesh, sign_mode: str = "pseudonormal"):
        if sign_mode not in ("pseudonormal", "winding"):
            raise ValueError(f"unknown sign_mode {sign_mode!r}")
        self.mesh = mesh
        self.sign_mode = sign_mode
        a, b, c = mesh.triangle_corners()
        tri_pts = np.stack([a, b, c], axis=1)
        self._bvh = _Bvh(tri_pts)
        self._face_normals = mesh.face_normals()[self._bvh.tri_order]
        self._faces = mesh.faces[self._bvh.tri_order]
        self._vert_normals = _angle_weighted_vertex_normals(mesh)
        self._edge_normals = _edge_pseudonormals(mesh)[self._bvh.tri_order]

    # -- raw queries -------------------------------------------------------

    def closest(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Per query: (unsigned distance, closest point, reordered tri index, feature code)."""
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N,3), got {pts.shape}")
        nq = len(pts)
        d2 = np.empty(nq)
        tri = np.empty(nq, dtype=np.int64)
        feat = np.empty(nq, dtype=np.int64)
        cp = np.empty((nq, 3))
        b = self._bvh
        bvh_closest(pts, b.box_lo, b.box_hi, b.left, b.right, b.start, b.count,
                    b.tri_pts, d2, tri, feat, cp)
        return np.sqrt(d2), cp, tri, feat

    def _feature_normals(self, tri: np.ndarray, feat: np.ndarray) -> np.ndarray:
        normals = self._face_normals[tri].copy()
        vert_mask = (feat >= 1) & (feat <= 3)
        if vert_mask.any():
            vidx = self._faces[tri[vert_mask], feat[vert_mask] - 1]
            normals[vert_mask] = self._vert_normals[vidx]
        edge_mask = feat >= 4
        if edge_mask.any():
            normals[edge_mask] = self._edge_normals[tri[edge_mask], feat[edge_mask] - 4]
        return normals

    def _signs(self, points: np.ndarray, dist: np.ndarray, cp: np.ndarray,
               tri: np.ndarray, feat: np.ndarray) -> np.ndarray:
        if self.sign_mode == "winding":
            w = np.empty(len(points))
            winding_numbers(np.ascontiguousarray(points, dtype=np.float64),
                            self._bvh.tri_pts, w)
            return np.where(w > 0.5, -1.0, 1.0)
        normals = self._feature_normals(tri, feat)
        dots = np.einsum("ij,ij->i", points - cp, normals)
        return np.where(dots >= 0.0, 1.0, -1.0)

    # -- public api --------------------------------------------------------

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Negative inside, positive outside, zero on the surface."""
        points = np.ascontiguousarray(points, dtype=np.float64)
        dist, cp, tri, feat = self.closest(points)
        return self._signs(points, dist, cp, tri, feat) * dist

    def sdf_gradient(self, points: np.ndarray, eps: float = 1e-12) -> np.ndarray:
        """Unit gradient of the signed distance.

        Away from the surface this is the unit vector from the closest
        surface point toward the query, negated inside.  Queries closer than
        ``eps`` use the closest feature's pseudonormal instead, which is the
        outward limit direction.
        """
        points = np.ascontiguousarray(points, dtype=np.float64)
        dist, cp, tri, feat = self.closest(points)
        signs = self._signs(points, dist, cp, tri, feat)
        grad = np.empty_like(points)
        near = dist <= eps
        far = ~near
        if far.any():
            diff = points[far] - cp[far]
            grad[far] = signs[far, None] * diff / dist[far, None]
        if near.any():
            grad[near] = self._feature_normals(tri[near], feat[near])
        return grad

    def query(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(signed distance, gradient) in one BVH pass."""
        points = np.ascontiguousarray(points, dtype=np.float64)
        dist, cp, tri, feat = self.closest(points)
        signs = self._signs(points, dist, cp, tri, feat)
        grad = np.empty_like(points)
        near = dist <= 1e-12
        far = ~near
        if far.any():
            diff = points[far] - cp[far]
            grad[far] = signs[far, None] * diff / dist[far, None]
        if near.any():
            grad[near] = self._feature_normals(tri[near], feat[near])
        return signs * dist, grad
