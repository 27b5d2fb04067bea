"""Voxel grids of node-sampled scalar values, with file round-trip.

The file layout is a short text header followed by raw little-endian
float32 samples in x-fastest order.
"""

from __future__ import annotations

import numpy as np

_MAGIC = "carimesh-voxelgrid 1"


class VoxelGrid:
    """Axis-aligned box sampled at ``res`` nodes per axis (res >= 2)."""

    def __init__(self, min_corner, max_corner, resolution, values=None):
        self.min_corner = np.asarray(min_corner, dtype=np.float64).reshape(3)
        self.max_corner = np.asarray(max_corner, dtype=np.float64).reshape(3)
        self.resolution = tuple(int(r) for r in resolution)
        if any(r < 2 for r in self.resolution):
            raise ValueError("grid resolution must be >= 2 per axis")
        if np.any(self.max_corner <= self.min_corner):
            raise ValueError("max corner must exceed min corner")
        if values is None:
            values = np.zeros(self.resolution)
        self.values = np.asarray(values, dtype=np.float64).reshape(self.resolution)

    def spacing(self):
        return (self.max_corner - self.min_corner) / (np.array(self.resolution) - 1)

    def node_positions(self):
        """(nx*ny*nz, 3) lattice node coordinates, x-fastest order."""
        axes = [
            np.linspace(self.min_corner[a], self.max_corner[a], self.resolution[a])
            for a in range(3)
        ]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F")], axis=1)

    def set_flat_values(self, flat):
        """Assign from x-fastest flat order (matches node_positions)."""
        self.values = np.asarray(flat, dtype=np.float64).reshape(self.resolution, order="F")

    def trilinear(self, points):
        """Trilinear interpolation at arbitrary points; clamps to the box."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        res = np.array(self.resolution)
        u = (p - self.min_corner) / (self.max_corner - self.min_corner) * (res - 1)
        u = np.clip(u, 0.0, res - 1)
        i0 = np.minimum(u.astype(np.int64), res - 2)
        f = u - i0
        v = self.values
        ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c000 = v[ix, iy, iz]
        c100 = v[ix + 1, iy, iz]
        c010 = v[ix, iy + 1, iz]
        c110 = v[ix + 1, iy + 1, iz]
        c001 = v[ix, iy, iz + 1]
        c101 = v[ix + 1, iy, iz + 1]
        c011 = v[ix, iy + 1, iz + 1]
        c111 = v[ix + 1, iy + 1, iz + 1]
        c00 = c000 * (1 - fx) + c100 * fx
        c10 = c010 * (1 - fx) + c110 * fx
        c01 = c001 * (1 - fx) + c101 * fx
        c11 = c011 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz


def save_voxel_grid(grid, path):
    with open(path, "wb") as fh:
        header = (
            f"{_MAGIC}\n"
            f"min {grid.min_corner[0]:.17g} {grid.min_corner[1]:.17g} {grid.min_corner[2]:.17g}\n"
            f"max {grid.max_corner[0]:.17g} {grid.max_corner[1]:.17g} {grid.max_corner[2]:.17g}\n"
            f"res {grid.resolution[0]} {grid.resolution[1]} {grid.resolution[2]}\n"
            "data\n"
        )
        fh.write(header.encode("ascii"))
        fh.write(grid.values.astype("<f4").tobytes(order="F"))


def load_voxel_grid(path):
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").strip()
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a voxel grid file")
        fields = {}
        for _ in range(3):
            parts = fh.readline().decode("ascii").split()
            fields[parts[0]] = parts[1:]
        if fh.readline().decode("ascii").strip() != "data":
            raise ValueError(f"{path}: missing data marker")
        res = tuple(int(x) for x in fields["res"])
        raw = np.frombuffer(fh.read(), dtype="<f4")
        if raw.size != res[0] * res[1] * res[2]:
            raise ValueError(f"{path}: sample count does not match resolution")
        grid = VoxelGrid(
            [float(x) for x in fields["min"]],
            [float(x) for x in fields["max"]],
            res,
        )
        grid.values = raw.astype(np.float64).reshape(res, order="F")
        return grid


def padded_bounds(mesh, padding=0.1):
    """Mesh bounding box expanded by a fraction of its extent per axis."""
    lo, hi = mesh.bounds()
    pad = (hi - lo) * padding
    return lo - pad, hi + pad
