"""Triangle mesh container, OBJ I/O and per-vertex normals.

Meshes are plain ``(V, 3)`` float64 vertex arrays plus ``(T, 3)`` int32
face-index arrays.  An optional ``topology_tag`` marks meshes that share
a common vertex ordering (template topology), which downstream PCA and
registration code relies on.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

# vertex counts pinned by known topology tags
_KNOWN_TOPOLOGY_SIZES = {"template-11551": 11551}


class MeshError(ValueError):
    """Invalid mesh data (bad indices, degenerate faces, topology mismatch)."""


class ObjParseError(MeshError):
    """Malformed OBJ input; carries the offending line number."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (T, 3) int32
    topology_tag: str | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError(f"faces must be (T, 3), got {self.faces.shape}")
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise MeshError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise MeshError("degenerate face (repeated vertex index)")
        want = _KNOWN_TOPOLOGY_SIZES.get(self.topology_tag or "")
        if want is not None and len(self.vertices) != want:
            raise MeshError(
                f"topology {self.topology_tag!r} requires {want} vertices, "
                f"got {len(self.vertices)}"
            )

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def copy(self):
        return Mesh(self.vertices.copy(), self.faces.copy(), self.topology_tag)

    def with_vertices(self, vertices):
        """Same connectivity, new vertex positions."""
        return Mesh(vertices, self.faces, self.topology_tag)

    def bounds(self):
        """(min_corner, max_corner) of the vertex set."""
        if not len(self.vertices):
            raise MeshError("empty mesh has no bounds")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self):
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def triangles(self):
        """(T, 3, 3) corner positions."""
        return self.vertices[self.faces]

    def edges(self):
        """Unique undirected edges as a (E, 2) int array, i < j."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def boundary_edge_count(self):
        """Number of edges with face valence != 2 (0 for watertight meshes)."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return int(np.count_nonzero(counts != 2))

    def is_watertight(self):
        return self.n_faces > 0 and self.boundary_edge_count() == 0


def face_normals(mesh, normalize=True):
    """Per-face normals; unnormalized value is twice the face area vector."""
    tri = mesh.triangles()
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    if normalize:
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        np.divide(n, norm, out=n, where=norm > 0)
    return n


def vertex_normals(mesh):
    """Area-weighted vertex normals.

    Each vertex normal is the sum of incident unnormalized face normals
    (cross products, area-weighted by construction), normalized.  Vertices
    whose incident faces all have zero area get the zero vector.
    """
    fn = face_normals(mesh, normalize=False)
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fn)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    out = np.zeros_like(acc)
    np.divide(acc, norm, out=out, where=norm > 1e-300)
    return out


def load_mesh(path, topology_tag=None):
    """Read a triangle-only OBJ file (``v`` and ``f`` records, 1-based)."""
    vertices = []
    faces = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            kind = parts[0]
            if kind == "v":
                if len(parts) < 4:
                    raise ObjParseError(path, lineno, "vertex needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise ObjParseError(path, lineno, f"bad vertex coordinates {parts[1:4]}")
            elif kind == "f":
                if len(parts) != 4:
                    raise ObjParseError(path, lineno, "only triangle faces are supported")
                idx = []
                for tok in parts[1:4]:
                    tok = tok.split("/", 1)[0]
                    try:
                        i = int(tok)
                    except ValueError:
                        raise ObjParseError(path, lineno, f"bad face index {tok!r}")
                    if i < 0:
                        i = len(vertices) + 1 + i
                    idx.append(i - 1)
                faces.append(idx)
            # other record types (vn, vt, o, g, s, mtllib, usemtl) are ignored
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    faces_arr = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if faces_arr.size and (faces_arr.min() < 0 or faces_arr.max() >= len(vertices)):
        bad = int(np.argmax((faces_arr < 0).any(axis=1) | (faces_arr >= len(vertices)).any(axis=1)))
        # recover the line number of the offending face record
        count = -1
        with open(path, "r") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if line.startswith("f "):
                    count += 1
                    if count == bad:
                        raise ObjParseError(path, lineno, "face index out of range")
        raise ObjParseError(path, 0, "face index out of range")
    return Mesh(vertices, faces_arr, topology_tag=topology_tag)


def save_mesh(mesh, path):
    """Write OBJ with 9-significant-digit coordinates."""
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        for v in mesh.vertices:
            fh.write("v %.9g %.9g %.9g\n" % (v[0], v[1], v[2]))
        for f in mesh.faces:
            fh.write("f %d %d %d\n" % (f[0] + 1, f[1] + 1, f[2] + 1))
    os.replace(tmp, path)
