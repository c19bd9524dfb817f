"""Level-set triangulation via marching cubes, with an active-region fast path.

The field is sampled on an axis-aligned node lattice over [-1,1]^3 with
``resolution`` nodes per axis.  Each of the (resolution-1)^3 cells is
classified by the signs of its eight corners (negative = inside) and
triangulated with the standard 256-case tables; crossing edges place
vertices by linear interpolation to the zero level.

The local variant skips every cell that provably lies outside the union of
the representation's support boxes, and only evaluates the field at nodes
adjacent to surviving cells.  Skipped cells cannot contain a sign change (a
cell disjoint from the support cannot straddle the zero set, which lies
inside it), so the two paths emit bit-identical meshes; vertices are
deduplicated by canonical edge key in both.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .geometry.mesh import MeshError, TriangleMesh
from .geometry.oracle import SdfOracle
from .geometry.sampling import sample_surface
from .mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE

_CELL_CHUNK = 1 << 21
_EVAL_CHUNK = 1 << 20


@dataclass
class ExtractionResult:
    """Triangulated zero level set plus work accounting."""

    vertices: np.ndarray  # (V,3) float64
    faces: np.ndarray     # (T,3) int64
    resolution: int
    cells_evaluated: int
    cells_total: int
    nodes_evaluated: int
    seconds: float

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def to_mesh(self) -> TriangleMesh:
        if self.is_empty:
            raise MeshError("empty level set: no sign change on the sampled lattice")
        return TriangleMesh(self.vertices, self.faces)


def _node_coords(resolution: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, resolution)


def _eval_nodes(field, resolution: int, node_flat: np.ndarray | None) -> tuple[np.ndarray, int]:
    """Field values on the node lattice, NaN where not requested.

    ``node_flat`` indexes nodes flattened as ((ix * R) + iy) * R + iz.
    """
    r = resolution
    xs = _node_coords(r)
    if node_flat is None:
        total = r * r * r
        values = np.empty(total)
        for lo in range(0, total, _EVAL_CHUNK):
            hi = min(lo + _EVAL_CHUNK, total)
            flat = np.arange(lo, hi)
            pts = np.stack([xs[flat // (r * r)], xs[(flat // r) % r], xs[flat % r]], axis=1)
            values[lo:hi] = field(pts)
        return values, total
    values = np.full(r * r * r, np.nan)
    for lo in range(0, len(node_flat), _EVAL_CHUNK):
        flat = node_flat[lo:lo + _EVAL_CHUNK]
        pts = np.stack([xs[flat // (r * r)], xs[(flat // r) % r], xs[flat % r]], axis=1)
        values[flat] = field(pts)
    return values, len(node_flat)


def _corner_value_offsets(resolution: int) -> np.ndarray:
    r = resolution
    return (CORNER_OFFSETS[:, 0] * r + CORNER_OFFSETS[:, 1]) * r + CORNER_OFFSETS[:, 2]


def _cells_to_node_base(flat_cells: np.ndarray, resolution: int) -> np.ndarray:
    c = resolution - 1
    iz = flat_cells % c
    iy = (flat_cells // c) % c
    ix = flat_cells // (c * c)
    return (ix * resolution + iy) * resolution + iz


def _triangulate(values: np.ndarray, resolution: int, cell_iter) -> tuple[np.ndarray, np.ndarray]:
    """Run the table-driven triangulation over the given cell id chunks."""
    offs = _corner_value_offsets(resolution)
    kept_base: list[np.ndarray] = []
    kept_cube: list[np.ndarray] = []
    for flat_cells in cell_iter:
        base = _cells_to_node_base(flat_cells, resolution)
        corner = values[base[:, None] + offs[None, :]]
        cube = ((corner < 0.0) << np.arange(8)).sum(axis=1)
        live = EDGE_TABLE[cube] != 0
        if live.any():
            kept_base.append(base[live])
            kept_cube.append(cube[live])
    if not kept_base:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)

    base = np.concatenate(kept_base)
    cube = np.concatenate(kept_cube)
    nn = resolution ** 3

    # canonical node pair per used (cell, edge)
    edge_bits = EDGE_TABLE[cube]
    edge_ids = np.full((len(base), 12), -1, dtype=np.int64)
    all_keys: list[np.ndarray] = []
    slots: list[tuple[np.ndarray, int]] = []
    for e in range(12):
        rows = np.flatnonzero(edge_bits & (1 << e))
        if len(rows) == 0:
            continue
        a = base[rows] + offs[EDGE_CORNERS[e, 0]]
        b = base[rows] + offs[EDGE_CORNERS[e, 1]]
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        all_keys.append(lo * nn + hi)
        slots.append((rows, e))
    keys = np.concatenate(all_keys)
    uniq, inverse = np.unique(keys, return_inverse=True)
    pos = 0
    for rows, e in slots:
        edge_ids[rows, e] = inverse[pos:pos + len(rows)]
        pos += len(rows)

    # one interpolated vertex per unique edge
    xs = _node_coords(resolution)
    node_a = uniq // nn
    node_b = uniq % nn
    va = values[node_a]
    vb = values[node_b]
    t = (va / (va - vb))[:, None]

    def node_pts(flat: np.ndarray) -> np.ndarray:
        r = resolution
        return np.stack([xs[flat // (r * r)], xs[(flat // r) % r], xs[flat % r]], axis=1)

    verts = node_pts(node_a) * (1.0 - t) + node_pts(node_b) * t

    tri_rows = TRI_TABLE[cube]
    cell_idx, slot_idx = np.nonzero(tri_rows >= 0)
    local_edges = tri_rows[cell_idx, slot_idx]
    flat_tris = edge_ids[cell_idx, local_edges].reshape(-1, 3)
    # table winding encloses the negative region with inward orientation; flip
    faces = flat_tris[:, [0, 2, 1]]
    return verts, faces


def marching_cubes(field, resolution: int) -> ExtractionResult:
    """Triangulate the zero level set of ``field`` over the full lattice.

    ``field`` is a batched callable mapping (N,3) points to (N,) values.
    """
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    start = time.perf_counter()
    values, nodes_eval = _eval_nodes(field, resolution, None)
    c = resolution - 1
    total = c * c * c

    def chunks():
        for lo in range(0, total, _CELL_CHUNK):
            yield np.arange(lo, min(lo + _CELL_CHUNK, total))

    verts, faces = _triangulate(values, resolution, chunks())
    return ExtractionResult(verts, faces, resolution, total, total, nodes_eval,
                            time.perf_counter() - start)


def active_cell_mask(centers: np.ndarray, scales: np.ndarray, resolution: int) -> np.ndarray:
    """Conservative mask of cells whose boxes may intersect any support ball."""
    c = resolution - 1
    h = 2.0 / c
    mask = np.zeros((c, c, c), dtype=bool)
    lo = np.clip(np.floor((centers - scales[:, None] + 1.0) / h).astype(np.int64), 0, c - 1)
    hi = np.clip(np.floor((centers + scales[:, None] + 1.0) / h).astype(np.int64), 0, c - 1)
    inside = (centers + scales[:, None] > -1.0).all(axis=1) & (centers - scales[:, None] < 1.0).all(axis=1)
    for i in np.flatnonzero(inside):
        mask[lo[i, 0]:hi[i, 0] + 1, lo[i, 1]:hi[i, 1] + 1, lo[i, 2]:hi[i, 2] + 1] = True
    return mask


def marching_cubes_masked(field, resolution: int, cell_mask: np.ndarray) -> ExtractionResult:
    """Triangulate only the masked cells, evaluating only their corner nodes."""
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    c = resolution - 1
    if cell_mask.shape != (c, c, c):
        raise ValueError(f"cell mask must be {(c, c, c)}, got {cell_mask.shape}")
    start = time.perf_counter()
    node_mask = np.zeros((resolution,) * 3, dtype=bool)
    for dx, dy, dz in CORNER_OFFSETS:
        node_mask[dx:dx + c, dy:dy + c, dz:dz + c] |= cell_mask
    node_flat = np.flatnonzero(node_mask.ravel())
    values, nodes_eval = _eval_nodes(field, resolution, node_flat)
    flat_cells = np.flatnonzero(cell_mask.ravel())

    def chunks():
        for lo in range(0, len(flat_cells), _CELL_CHUNK):
            yield flat_cells[lo:lo + _CELL_CHUNK]

    verts, faces = _triangulate(values, resolution, chunks())
    return ExtractionResult(verts, faces, resolution, len(flat_cells), c ** 3, nodes_eval,
                            time.perf_counter() - start)


def chamfer_to_mesh(mesh_a: TriangleMesh, mesh_b: TriangleMesh,
                    samples: int = 5000, seed: int = 0) -> float:
    """Symmetric Chamfer distance between two mesh surfaces.

    Area-uniform samples are drawn from each mesh with a shared seed and
    measured against the other mesh's triangles (squared closest-point
    distance, averaged per direction and summed).  Scoring against the
    surface rather than a second point cloud makes identical meshes score
    zero to machine precision and keeps the value free of the
    point-sampling floor that would otherwise mask sub-millimeter surface
    deviations.
    """
    pts_a = sample_surface(mesh_a, samples, seed).points
    pts_b = sample_surface(mesh_b, samples, seed).points
    da = SdfOracle(mesh_b).closest(pts_a)[0]
    db = SdfOracle(mesh_a).closest(pts_b)[0]
    return float(np.mean(da ** 2) + np.mean(db ** 2))
