"""Triangle mesh container and file I/O.

Supported formats: Wavefront OBJ (ascii), PLY (ascii and binary little
endian), and binary STL.  Loaders triangulate polygonal faces with a fan,
validate indices, and reject empty or non-finite geometry.  Meshes are
plain vertex/face arrays; derived quantities (normals, areas, adjacency)
are computed lazily and cached.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

FloatArray = np.ndarray
IntArray = np.ndarray


class MeshError(ValueError):
    """Raised for unreadable files, bad indices, or degenerate input."""


@dataclass
class TriangleMesh:
    """Indexed triangle soup: ``vertices`` (V,3) float64, ``faces`` (F,3) int64."""

    vertices: FloatArray
    faces: IntArray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError(f"vertices must be (V,3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError(f"faces must be (F,3), got {self.faces.shape}")
        if len(self.vertices) == 0 or len(self.faces) == 0:
            raise MeshError("empty mesh")
        if not np.isfinite(self.vertices).all():
            raise MeshError("non-finite vertex coordinates")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise MeshError("face index out of range")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def triangle_corners(self) -> tuple[FloatArray, FloatArray, FloatArray]:
        """Per-face corner positions (a, b, c), each (F,3)."""
        v, f = self.vertices, self.faces
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    def face_areas(self) -> FloatArray:
        if "areas" not in self._cache:
            a, b, c = self.triangle_corners()
            cross = np.cross(b - a, c - a)
            self._cache["areas"] = 0.5 * np.linalg.norm(cross, axis=1)
        return self._cache["areas"]

    def face_normals(self) -> FloatArray:
        """Unit face normals; zero-area faces get a zero normal."""
        if "normals" not in self._cache:
            a, b, c = self.triangle_corners()
            cross = np.cross(b - a, c - a)
            norm = np.linalg.norm(cross, axis=1, keepdims=True)
            self._cache["normals"] = np.where(norm > 0.0, cross / np.where(norm == 0.0, 1.0, norm), 0.0)
        return self._cache["normals"]

    def total_area(self) -> float:
        return float(self.face_areas().sum())

    def bounds(self) -> tuple[FloatArray, FloatArray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def edge_face_count(self) -> dict[tuple[int, int], int]:
        """Undirected edge -> number of incident faces."""
        counts: dict[tuple[int, int], int] = {}
        for tri in self.faces:
            for i in range(3):
                u, w = int(tri[i]), int(tri[(i + 1) % 3])
                key = (u, w) if u < w else (w, u)
                counts[key] = counts.get(key, 0) + 1
        return counts

    def is_watertight(self) -> bool:
        """True when every undirected edge is shared by exactly two faces."""
        if "watertight" not in self._cache:
            counts = self.edge_face_count()
            self._cache["watertight"] = all(c == 2 for c in counts.values())
        return self._cache["watertight"]

    def euler_characteristic(self) -> int:
        ne = len(self.edge_face_count())
        return self.num_vertices - ne + self.num_faces


def normalize_to_unit_cube(mesh: TriangleMesh, margin: float = 0.0) -> TriangleMesh:
    """Recenter and uniformly rescale so the longest axis spans [-1+margin, 1-margin].

    The same scale is applied to all axes, so shape proportions are kept.
    """
    if not 0.0 <= margin < 1.0:
        raise MeshError(f"margin must be in [0, 1), got {margin}")
    lo, hi = mesh.bounds()
    center = 0.5 * (lo + hi)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise MeshError("degenerate mesh: zero extent")
    scale = 2.0 * (1.0 - margin) / extent
    return TriangleMesh((mesh.vertices - center) * scale, mesh.faces.copy())


# ---------------------------------------------------------------------------
# loaders


def load_mesh(path: str) -> TriangleMesh:
    """Load OBJ / PLY / STL by file extension."""
    lower = str(path).lower()
    if lower.endswith(".obj"):
        return load_obj(path)
    if lower.endswith(".ply"):
        return load_ply(path)
    if lower.endswith(".stl"):
        return load_stl(path)
    raise MeshError(f"unsupported mesh format: {path}")


def _fan(indices: list[int]) -> list[tuple[int, int, int]]:
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def load_obj(path: str) -> TriangleMesh:
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", errors="replace") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshError(f"malformed vertex line in {path}: {line!r}")
                vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    raw = int(tok.split("/")[0])
                    # OBJ indices are 1-based; negative counts from the end
                    idx.append(raw - 1 if raw > 0 else len(vertices) + raw)
                if len(idx) < 3:
                    raise MeshError(f"face with <3 vertices in {path}")
                faces.extend(_fan(idx))
    if not vertices or not faces:
        raise MeshError(f"no geometry in {path}")
    return TriangleMesh(np.asarray(vertices), np.asarray(faces))


def save_obj(mesh: TriangleMesh, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {mesh.num_vertices} vertices, {mesh.num_faces} faces\n")
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


_PLY_DTYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def load_ply(path: str) -> TriangleMesh:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise MeshError(f"not a PLY file: {path}")
        fmt = None
        elements: list[tuple[str, int, list]] = []  # (name, count, [(prop, dtype) or ('list', ct, it)])
        while True:
            line = fh.readline()
            if not line:
                raise MeshError(f"unterminated PLY header in {path}")
            tok = line.decode("ascii", errors="replace").split()
            if not tok:
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                elements.append((tok[1], int(tok[2]), []))
            elif tok[0] == "property":
                if not elements:
                    raise MeshError("property before element in PLY header")
                if tok[1] == "list":
                    elements[-1][2].append(("list", tok[2], tok[3], tok[4]))
                else:
                    elements[-1][2].append(("scalar", tok[1], tok[2]))
            elif tok[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise MeshError(f"unsupported PLY format {fmt!r}")
        if fmt == "ascii":
            body = fh.read().decode("ascii", errors="replace").split()
            return _parse_ply_ascii(body, elements, path)
        return _parse_ply_binary(fh, elements, path)


def _parse_ply_ascii(body: list[str], elements, path: str) -> TriangleMesh:
    pos = 0
    vertices = None
    faces: list[tuple[int, int, int]] = []
    for name, count, props in elements:
        if name == "vertex":
            names = [p[2] for p in props if p[0] == "scalar"]
            width = len(names)
            block = np.asarray(body[pos:pos + count * width], dtype=np.float64).reshape(count, width)
            pos += count * width
            try:
                cols = [names.index(ax) for ax in ("x", "y", "z")]
            except ValueError:
                raise MeshError(f"PLY vertex element lacks x/y/z in {path}")
            vertices = block[:, cols]
        elif name == "face":
            for _ in range(count):
                n = int(body[pos]); pos += 1
                idx = [int(body[pos + j]) for j in range(n)]; pos += n
                faces.extend(_fan(idx))
        else:
            # skip unknown fixed-width elements
            width = len(props)
            pos += count * width
    if vertices is None or not faces:
        raise MeshError(f"no geometry in {path}")
    return TriangleMesh(vertices, np.asarray(faces))


def _parse_ply_binary(fh, elements, path: str) -> TriangleMesh:
    vertices = None
    faces: list[tuple[int, int, int]] = []
    for name, count, props in elements:
        if name == "vertex":
            if any(p[0] == "list" for p in props):
                raise MeshError("list property on PLY vertex element is unsupported")
            names = [p[2] for p in props]
            dtype = np.dtype([(p[2], "<" + _PLY_DTYPES[p[1]]) for p in props])
            block = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype, count=count)
            if not {"x", "y", "z"} <= set(names):
                raise MeshError(f"PLY vertex element lacks x/y/z in {path}")
            vertices = np.stack([block["x"], block["y"], block["z"]], axis=1).astype(np.float64)
        elif name == "face":
            list_props = [p for p in props if p[0] == "list"]
            if len(props) != 1 or not list_props:
                raise MeshError("PLY face element must be a single list property")
            _, count_t, item_t, _ = list_props[0]
            cdt = np.dtype("<" + _PLY_DTYPES[count_t])
            idt = np.dtype("<" + _PLY_DTYPES[item_t])
            for _ in range(count):
                n = int(np.frombuffer(fh.read(cdt.itemsize), dtype=cdt)[0])
                idx = np.frombuffer(fh.read(idt.itemsize * n), dtype=idt, count=n).tolist()
                faces.extend(_fan(idx))
        else:
            width = sum(np.dtype(_PLY_DTYPES[p[1]]).itemsize for p in props if p[0] == "scalar")
            fh.read(width * count)
    if vertices is None or not faces:
        raise MeshError(f"no geometry in {path}")
    return TriangleMesh(vertices, np.asarray(faces))


def load_stl(path: str) -> TriangleMesh:
    """Binary STL. Size must equal 84 + 50 * triangle_count bytes."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 84:
        raise MeshError(f"truncated STL file: {path}")
    (count,) = struct.unpack_from("<I", data, 80)
    if len(data) != 84 + 50 * count:
        raise MeshError(f"STL size mismatch in {path} (ascii STL is unsupported)")
    rec = np.dtype([("normal", "<f4", 3), ("verts", "<f4", (3, 3)), ("attr", "<u2")])
    tris = np.frombuffer(data, dtype=rec, count=count, offset=84)
    flat = tris["verts"].reshape(-1, 3).astype(np.float64)
    # merge exactly coincident corners so the result is indexed
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    faces = inverse.reshape(-1, 3)
    return TriangleMesh(uniq, faces)
