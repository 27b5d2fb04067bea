import numpy as np
import pytest

from carimesh.mcubes import marching_cubes
from carimesh.mesh import face_normals
from carimesh.voxel import VoxelGrid


def sphere_grid(resolution, radius=1.0, extent=1.4):
    grid = VoxelGrid(-extent * np.ones(3), extent * np.ones(3),
                     (resolution,) * 3)
    pos = grid.node_positions()
    vals = (np.linalg.norm(pos, axis=1) < radius).astype(np.float64)
    grid.set_flat_values(vals)
    return grid


def mesh_area_volume(mesh):
    v = mesh.vertices
    tri = v[mesh.faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area = 0.5 * np.linalg.norm(cross, axis=1).sum()
    volume = np.einsum("ij,ij->i", tri[:, 0], cross).sum() / 6.0
    return area, abs(volume)


@pytest.mark.parametrize("resolution", [48, 96])
def test_sphere_area_and_volume(resolution):
    mesh = marching_cubes(sphere_grid(resolution), iso=0.5)
    area, volume = mesh_area_volume(mesh)
    # binary occupancy quantizes the surface to half a voxel, so the bound
    # scales with the spacing
    spacing = 2 * 1.4 / (resolution - 1)
    assert abs(volume - 4 / 3 * np.pi) < 4 * np.pi * spacing
    assert abs(area - 4 * np.pi) < 0.25 * 4 * np.pi


def test_output_watertight_and_outward(head2):
    from carimesh.spatial import SpatialIndex
    from carimesh.field import MeshOracleField, rasterize_field
    from carimesh.voxel import padded_bounds

    lo, hi = padded_bounds(head2, 0.1)
    grid = rasterize_field(MeshOracleField(head2, SpatialIndex(head2)),
                           VoxelGrid(lo, hi, (48,) * 3))
    mesh = marching_cubes(grid)
    assert mesh.is_watertight()
    # the head is star-shaped around the origin: outward normals align with
    # the radial direction on average
    centers = mesh.vertices[mesh.faces].mean(axis=1)
    n = face_normals(mesh)
    dots = np.einsum("ij,ij->i", n, centers / np.linalg.norm(
        centers, axis=1, keepdims=True))
    assert np.mean(dots > 0) > 0.98


def test_empty_grid_yields_empty_mesh():
    grid = VoxelGrid(np.zeros(3), np.ones(3), (8, 8, 8))
    grid.set_flat_values(np.zeros(8 ** 3))
    mesh = marching_cubes(grid)
    assert mesh.n_vertices == 0 and mesh.n_faces == 0


def test_iso_level_shifts_radius():
    # smooth field: value = radius; surfaces at different iso levels land at
    # the corresponding radii
    grid = VoxelGrid(-1.4 * np.ones(3), 1.4 * np.ones(3), (64,) * 3)
    pos = grid.node_positions()
    grid.set_flat_values(np.linalg.norm(pos, axis=1))
    for iso in (0.6, 1.0):
        mesh = marching_cubes(grid, iso=iso)
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert abs(radii.mean() - iso) < 5e-3
        assert radii.std() < 5e-3


def test_vertices_interpolated_not_snapped():
    grid = sphere_grid(48)
    mesh = marching_cubes(grid)
    spacing = grid.spacing()
    frac = (mesh.vertices - (-1.4)) / spacing
    off_lattice = np.abs(frac - np.round(frac)).max(axis=1) > 1e-9
    assert off_lattice.mean() > 0.5
