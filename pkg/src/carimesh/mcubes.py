"""Vectorized 256-case marching cubes over a node-sampled scalar grid.

Iso-vertices are generated once per global grid edge (canonical low-to-high
orientation), so the extracted surface is watertight by construction
whenever the iso-surface stays off the grid boundary.  Triangles are wound
so normals point from high field values toward low ones (outward, for
occupancy fields).
"""

from __future__ import annotations

import numpy as np

from .mc_tables import EDGE_TABLE, TRI_TABLE
from .mesh import Mesh

# local cube corners, Bourke order
_CORNER_OFFSETS = np.array(
    [
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ],
    dtype=np.int64,
)

# per local edge: (axis, base-node offset) of the global grid edge it lies on
_EDGE_AXIS = np.array([0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2], dtype=np.int64)
_EDGE_BASE = np.array(
    [
        [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0],
        [0, 0, 1], [1, 0, 1], [0, 1, 1], [0, 0, 1],
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    ],
    dtype=np.int64,
)


def marching_cubes(grid, iso=0.5):
    """Extract the iso-surface of a VoxelGrid as a triangle Mesh.

    Constant fields (no crossing) yield an empty mesh.
    """
    vals = grid.values
    nx, ny, nz = vals.shape
    if nx < 2 or ny < 2 or nz < 2:
        raise ValueError("marching cubes needs at least 2 nodes per axis")

    below = vals < iso
    # corner occupancy bits per cube, Bourke convention (bit set: below iso)
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int32)
    for bit, (dx, dy, dz) in enumerate(_CORNER_OFFSETS):
        case |= below[dx: nx - 1 + dx, dy: ny - 1 + dy, dz: nz - 1 + dz].astype(np.int32) << bit

    active = np.nonzero(EDGE_TABLE[case] != 0)
    if len(active[0]) == 0:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))
    ci, cj, ck = (a.astype(np.int64) for a in active)
    acase = case[active]

    # global edge ids per active cube and local edge: axis * n_nodes + node id
    n_nodes = nx * ny * nz
    base_i = ci[:, None] + _EDGE_BASE[:, 0]
    base_j = cj[:, None] + _EDGE_BASE[:, 1]
    base_k = ck[:, None] + _EDGE_BASE[:, 2]
    gids = _EDGE_AXIS * n_nodes + (base_i * ny + base_j) * nz + base_k  # (A, 12)

    # gather triangles
    tri_rows = TRI_TABLE[acase]  # (A, 16)
    tri_local = tri_rows[:, :15].reshape(-1, 5, 3)
    valid = tri_local[:, :, 0] >= 0  # (A, 5)
    cube_of_tri = np.nonzero(valid)[0]
    tri_local = tri_local[valid]  # (F, 3) local edge ids
    faces_gid = np.take_along_axis(gids[cube_of_tri], tri_local, axis=1)

    # unique edges -> shared vertices
    uniq, inverse = np.unique(faces_gid.ravel(), return_inverse=True)
    faces = inverse.reshape(-1, 3).astype(np.int32)

    axis = uniq // n_nodes
    node = uniq % n_nodes
    bi = node // (ny * nz)
    bj = (node // nz) % ny
    bk = node % nz

    v1 = vals[bi, bj, bk]
    i2 = bi + (axis == 0)
    j2 = bj + (axis == 1)
    k2 = bk + (axis == 2)
    v2 = vals[i2, j2, k2]
    t = (iso - v1) / (v2 - v1)

    spacing = grid.spacing()
    p1 = grid.min_corner + np.stack([bi, bj, bk], axis=1) * spacing
    verts = p1
    verts = verts.astype(np.float64)
    verts[np.arange(len(uniq)), axis] += t * spacing[axis]

    # Bourke winding has normals pointing toward the below-iso side already;
    # keep triangles as-is so occupancy (> iso inside) yields outward normals
    return Mesh(verts, faces)
