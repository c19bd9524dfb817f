"""Procedural watertight test meshes.

Analytic primitives (icosphere, torus, box, cylinder, capsule) are stitched
index meshes and watertight by construction.  Composite shapes are produced
by triangulating analytic implicit functions at a fixed resolution; the
suite builder verifies every mesh is watertight before handing it out.

Run ``python -m msdf.shapes OUT_DIR`` to write the suite as OBJ files plus
a manifest consumable by the command line tools.
"""

from __future__ import annotations

import json
import os
import sys

import numpy as np

from .extraction import marching_cubes
from .geometry.mesh import TriangleMesh, normalize_to_unit_cube, save_obj


def icosphere(subdivisions: int = 3, radius: float = 0.5) -> TriangleMesh:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriangleMesh(np.asarray(verts) * radius, np.asarray(faces))


def ellipsoid(rx: float, ry: float, rz: float, subdivisions: int = 3) -> TriangleMesh:
    base = icosphere(subdivisions, 1.0)
    return TriangleMesh(base.vertices * np.array([rx, ry, rz]), base.faces)


def uv_torus(major: float = 0.55, minor: float = 0.2, nu: int = 48, nv: int = 24) -> TriangleMesh:
    iu = np.arange(nu)
    iv = np.arange(nv)
    theta = 2.0 * np.pi * iu / nu
    phi = 2.0 * np.pi * iv / nv
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    ring = major + minor * np.cos(ph)
    verts = np.stack([ring * np.cos(th), ring * np.sin(th), minor * np.sin(ph)], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(nu):
        i2 = (i + 1) % nu
        for j in range(nv):
            j2 = (j + 1) % nv
            a, b = i * nv + j, i2 * nv + j
            c, d = i2 * nv + j2, i * nv + j2
            faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(verts, np.asarray(faces))


def box(hx: float = 0.6, hy: float = 0.45, hz: float = 0.3) -> TriangleMesh:
    s = np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
                  [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], dtype=np.float64)
    verts = s * np.array([hx, hy, hz])
    faces = np.array([
        (0, 2, 1), (0, 3, 2),  # z-
        (4, 5, 6), (4, 6, 7),  # z+
        (0, 1, 5), (0, 5, 4),  # y-
        (2, 3, 7), (2, 7, 6),  # y+
        (1, 2, 6), (1, 6, 5),  # x+
        (3, 0, 4), (3, 4, 7),  # x-
    ], dtype=np.int64)
    return TriangleMesh(verts, faces)


def cylinder(radius: float = 0.4, half_height: float = 0.55, segments: int = 48) -> TriangleMesh:
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    top = np.column_stack([ring, np.full(segments, half_height)])
    bot = np.column_stack([ring, np.full(segments, -half_height)])
    verts = np.vstack([top, bot, [[0, 0, half_height]], [[0, 0, -half_height]]])
    ct, cb = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [(i, segments + i, segments + j), (i, segments + j, j)]  # side
        faces += [(ct, i, j)]                                             # top fan
        faces += [(cb, segments + j, segments + i)]                       # bottom fan
    return TriangleMesh(verts, np.asarray(faces))


def capsule(radius: float = 0.3, half_height: float = 0.45,
            segments: int = 32, rings: int = 8) -> TriangleMesh:
    lats = np.concatenate([np.linspace(-np.pi / 2, 0.0, rings + 1),
                           np.linspace(0.0, np.pi / 2, rings + 1)])
    offs = np.concatenate([np.full(rings + 1, -half_height), np.full(rings + 1, half_height)])
    rows = []
    verts: list[np.ndarray] = [np.array([0.0, 0.0, -half_height - radius])]
    for lat, off in zip(lats, offs):
        ang = 2.0 * np.pi * np.arange(segments) / segments
        r = radius * np.cos(lat)
        z = radius * np.sin(lat) + off
        row = np.stack([r * np.cos(ang), r * np.sin(ang), np.full(segments, z)], axis=1)
        rows.append(len(verts))
        verts.extend(row)
    verts.append(np.array([0.0, 0.0, half_height + radius]))
    south, north = 0, len(verts) - 1
    faces = []
    first = rows[0]
    for i in range(segments):
        faces.append((south, first + (i + 1) % segments, first + i))
    for r0, r1 in zip(rows[:-1], rows[1:]):
        for i in range(segments):
            j = (i + 1) % segments
            faces += [(r0 + i, r1 + j, r1 + i), (r0 + i, r0 + j, r1 + j)]
    last = rows[-1]
    for i in range(segments):
        faces.append((north, last + i, last + (i + 1) % segments))
    return TriangleMesh(np.asarray(verts), np.asarray(faces))


# -- implicit composites ----------------------------------------------------


def _smin(a: np.ndarray, b: np.ndarray, k: float) -> np.ndarray:
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b * (1.0 - h) + a * h - k * h * (1.0 - h)


def _sphere_sdf(p: np.ndarray, center, radius: float) -> np.ndarray:
    return np.linalg.norm(p - np.asarray(center), axis=1) - radius


def _torus_sdf(p: np.ndarray, major: float, minor: float) -> np.ndarray:
    q = np.hypot(np.hypot(p[:, 0], p[:, 1]) - major, p[:, 2])
    return q - minor


def _rounded_box_sdf(p: np.ndarray, half, round_r: float) -> np.ndarray:
    q = np.abs(p) - np.asarray(half)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    return outside + inside - round_r


def blob(resolution: int = 96) -> TriangleMesh:
    def f(p):
        d = _sphere_sdf(p, (0.25, 0.0, 0.1), 0.32)
        d = _smin(d, _sphere_sdf(p, (-0.25, 0.12, -0.1), 0.28), 0.12)
        d = _smin(d, _sphere_sdf(p, (0.0, -0.28, 0.0), 0.24), 0.12)
        return d
    return marching_cubes(f, resolution).to_mesh()


def linked_tori(resolution: int = 96) -> TriangleMesh:
    def f(p):
        a = _torus_sdf(p - np.array([0.22, 0.0, 0.0]), 0.32, 0.1)
        q = np.stack([p[:, 0] + 0.22, p[:, 2], p[:, 1]], axis=1)
        b = _torus_sdf(q, 0.32, 0.1)
        return np.minimum(a, b)
    return marching_cubes(f, resolution).to_mesh()


def holey_box(resolution: int = 96) -> TriangleMesh:
    def f(p):
        d = _rounded_box_sdf(p, (0.5, 0.38, 0.26), 0.05)
        hole = np.hypot(p[:, 0], p[:, 1]) - 0.16
        return np.maximum(d, -hole)
    return marching_cubes(f, resolution).to_mesh()


def plate() -> TriangleMesh:
    return box(0.7, 0.5, 0.045)


SHAPE_BUILDERS = {
    "sphere": lambda: icosphere(4, 0.55),
    "ellipsoid": lambda: ellipsoid(0.62, 0.42, 0.3, 4),
    "torus": lambda: uv_torus(0.52, 0.2),
    "thin_torus": lambda: uv_torus(0.58, 0.09, 64, 20),
    "box": lambda: box(),
    "plate": plate,
    "cylinder": lambda: cylinder(),
    "capsule": lambda: capsule(),
    "blob": blob,
    "linked_tori": linked_tori,
    "holey_box": holey_box,
    "tall_ellipsoid": lambda: ellipsoid(0.28, 0.33, 0.68, 4),
}


def build_shape(name: str, normalize: bool = True) -> TriangleMesh:
    if name not in SHAPE_BUILDERS:
        raise KeyError(f"unknown shape {name!r}; choices: {sorted(SHAPE_BUILDERS)}")
    mesh = SHAPE_BUILDERS[name]()
    if normalize:
        mesh = normalize_to_unit_cube(mesh, margin=0.1)
    if not mesh.is_watertight():
        raise RuntimeError(f"shape {name!r} is not watertight")
    return mesh


def shape_suite(names: list[str] | None = None) -> dict[str, TriangleMesh]:
    return {name: build_shape(name) for name in (names or sorted(SHAPE_BUILDERS))}


def write_suite(out_dir: str, names: list[str] | None = None,
                classes: dict[str, int] | None = None) -> str:
    """Write the suite as OBJ files plus a line-delimited JSON manifest.

    Returns the manifest path.  Classes default to the alphabetical index of
    the shape name.
    """
    os.makedirs(out_dir, exist_ok=True)
    suite = shape_suite(names)
    manifest = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest, "w") as fh:
        for i, (name, mesh) in enumerate(suite.items()):
            path = os.path.join(out_dir, f"{name}.obj")
            save_obj(mesh, path)
            label = classes[name] if classes else i
            fh.write(json.dumps({"id": name, "mesh": path, "class": label}) + "\n")
    return manifest


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "testdata"
    print(write_suite(target))
