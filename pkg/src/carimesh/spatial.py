"""Spatial acceleration and geometric queries over a triangle mesh.

A median-split BVH is built once (NumPy, single-threaded); all queries are
read-only afterwards and dispatch to the active kernel backend.  Brute-force
references used as test oracles live here as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import numpy_backend
from .mesh import Mesh, MeshError

_LEAF_SIZE = 8

# deterministic direction sequence for parity-ray recasting
_PARITY_DIRS = np.array(
    [
        [0.57735026918962576, 0.57735026918962576, 0.57735026918962576],
        [0.85708226971843556, -0.29784335030845740, 0.42036205565686644],
        [-0.21637216261819124, 0.91679485013811679, 0.33574003780037431],
        [0.43231290650617802, 0.17040206412113424, -0.88546738139174987],
        [-0.68243734357635616, -0.52173069137662326, 0.51219743844858214],
        [0.14814817765510232, -0.80178372573182016, -0.57894754371237154],
        [-0.92031647021455844, 0.32842351127018183, -0.21147270000965441],
        [0.50709255283710986, 0.84515425472851652, -0.16903085094570322],
    ]
)


class SpatialIndexError(MeshError):
    pass


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must have unit norm")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


class SpatialIndex:
    """Bounding-volume hierarchy over a mesh's triangles (immutable)."""

    def __init__(self, mesh: Mesh, leaf_size: int = _LEAF_SIZE):
        if mesh.n_faces == 0:
            raise SpatialIndexError("cannot index an empty mesh")
        self.mesh = mesh
        self.verts = np.ascontiguousarray(mesh.vertices, dtype=np.float64)
        self.tris = np.ascontiguousarray(mesh.faces, dtype=np.int32)
        self._build(leaf_size)

    def _build(self, leaf_size):
        tv = self.verts[self.tris]
        tri_min = tv.min(axis=1)
        tri_max = tv.max(axis=1)
        cent = tv.mean(axis=1)
        ntri = len(self.tris)
        order = np.arange(ntri, dtype=np.int32)

        bmin, bmax, left, right, start, count = [], [], [], [], [], []

        def new_node():
            bmin.append(None)
            bmax.append(None)
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            return len(bmin) - 1

        stack = [(new_node(), 0, ntri)]
        while stack:
            node, lo, hi = stack.pop()
            ids = order[lo:hi]
            bmin[node] = tri_min[ids].min(axis=0)
            bmax[node] = tri_max[ids].max(axis=0)
            if hi - lo <= leaf_size:
                start[node] = lo
                count[node] = hi - lo
                continue
            c = cent[ids]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = (hi - lo) // 2
            part = np.argpartition(c[:, axis], mid, kind="introselect")
            order[lo:hi] = ids[part]
            lnode = new_node()
            rnode = new_node()
            left[node] = lnode
            right[node] = rnode
            stack.append((lnode, lo, lo + mid))
            stack.append((rnode, lo + mid, hi))

        self.bmin = np.ascontiguousarray(bmin, dtype=np.float64)
        self.bmax = np.ascontiguousarray(bmax, dtype=np.float64)
        self.left = np.ascontiguousarray(left, dtype=np.int32)
        self.right = np.ascontiguousarray(right, dtype=np.int32)
        self.start = np.ascontiguousarray(start, dtype=np.int32)
        self.count = np.ascontiguousarray(count, dtype=np.int32)
        self.order = np.ascontiguousarray(order, dtype=np.int32)


def _as_points(q):
    q = np.ascontiguousarray(q, dtype=np.float64)
    single = q.ndim == 1
    return q.reshape(-1, 3), single


def closest_point_on_surface(query, mesh, index):
    """Closest surface point(s); returns (point, face_id, distance).

    Accepts one point or an (n, 3) batch.  Ties between equidistant
    triangles break toward the lowest face id.
    """
    q, single = _as_points(query)
    pts, faces, dists = kernels.closest_point(q, index.verts, index.tris, index)
    if single:
        return pts[0], int(faces[0]), float(dists[0])
    return pts, faces, dists


def ray_intersect(ray, mesh, index):
    """First intersection of a ray with the mesh, or None on a miss."""
    o = ray.origin.reshape(1, 3)
    d = ray.direction.reshape(1, 3)
    t, face, _ = kernels.ray_first_hit(o, d, index.verts, index.tris, index)
    if not np.isfinite(t[0]):
        return None
    return float(t[0]), int(face[0]), o[0] + t[0] * d[0]


def point_in_mesh(query, mesh, index):
    """Parity-ray inside test for a closed mesh.

    Casts along a fixed direction sequence, re-casting whenever a crossing
    grazes a triangle edge/vertex or a near-parallel triangle, so the parity
    is trustworthy.  Raises on non-watertight input.
    """
    if not mesh.is_watertight():
        raise MeshError("point_in_mesh requires a watertight mesh "
                        f"({mesh.boundary_edge_count()} boundary edges)")
    q, single = _as_points(query)
    inside = np.zeros(len(q), dtype=bool)
    pending = np.arange(len(q))
    for d in _PARITY_DIRS:
        dirs = np.broadcast_to(d, (len(pending), 3))
        dirs = np.ascontiguousarray(dirs)
        cnt, degen = kernels.ray_crossings(q[pending], dirs, index.verts, index.tris, index)
        ok = ~degen
        inside[pending[ok]] = (cnt[ok] % 2) == 1
        pending = pending[degen]
        if not len(pending):
            break
    if len(pending):
        # every direction in the sequence grazed; accept the last parity
        dirs = np.ascontiguousarray(np.broadcast_to(_PARITY_DIRS[-1], (len(pending), 3)))
        cnt, _ = kernels.ray_crossings(q[pending], dirs, index.verts, index.tris, index)
        inside[pending] = (cnt % 2) == 1
    if single:
        return bool(inside[0])
    return inside


# ---------------------------------------------------------------------------
# brute-force references (test oracles; also correct, just O(T) per query)

def closest_point_brute(query, mesh):
    tv = mesh.vertices[mesh.faces]
    q, single = _as_points(query)
    out_p = np.empty((len(q), 3))
    out_f = np.empty(len(q), dtype=np.int64)
    out_d = np.empty(len(q))
    for i, p in enumerate(q):
        pts, d2 = numpy_backend.closest_point_triangles(p, tv)
        f = int(np.argmin(d2))  # argmin keeps the lowest face id on ties
        out_p[i] = pts[f]
        out_f[i] = f
        out_d[i] = np.sqrt(d2[f])
    if single:
        return out_p[0], int(out_f[0]), float(out_d[0])
    return out_p, out_f, out_d


def ray_intersect_brute(ray, mesh):
    tv = mesh.vertices[mesh.faces]
    t, hit, _ = numpy_backend.ray_triangles(ray.origin, ray.direction, tv)
    if not hit.any():
        return None
    f = int(np.argmin(t))
    return float(t[f]), f, ray.origin + t[f] * ray.direction
