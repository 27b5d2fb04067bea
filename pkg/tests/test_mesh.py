import numpy as np
import pytest

from carimesh.mesh import (Mesh, ObjParseError, face_normals, load_mesh,
                           save_mesh, vertex_normals)


def test_obj_round_trip(head2, tmp_path):
    path = tmp_path / "head.obj"
    save_mesh(head2, path)
    back = load_mesh(path, topology_tag=head2.topology_tag)
    np.testing.assert_allclose(back.vertices, head2.vertices, atol=1e-12)
    np.testing.assert_array_equal(back.faces, head2.faces)


def test_obj_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 zzz\n")
    with pytest.raises(ObjParseError) as err:
        load_mesh(path)
    assert err.value.lineno == 4


def test_face_normals_unit_and_orientation():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    faces = np.array([[0, 1, 2]])
    mesh = Mesh(verts, faces)
    n = face_normals(mesh)
    np.testing.assert_allclose(n, [[0, 0, 1]], atol=1e-15)


def test_vertex_normals_sphere_point_outward(head2):
    # vertices of a star-shaped surface around the origin: normals must
    # point away from the origin everywhere
    n = vertex_normals(head2)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)
    dots = np.einsum("ij,ij->i", n, head2.vertices / np.linalg.norm(
        head2.vertices, axis=1, keepdims=True))
    assert dots.min() > 0.2


def test_watertight_and_bounds(head2):
    assert head2.is_watertight()
    assert head2.boundary_edge_count() == 0
    lo, hi = head2.bounds()
    assert np.all(lo < hi)
    assert head2.bbox_diagonal() == pytest.approx(np.linalg.norm(hi - lo))


def test_open_mesh_not_watertight():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    mesh = Mesh(verts, np.array([[0, 1, 2]]))
    assert not mesh.is_watertight()
    assert mesh.boundary_edge_count() == 3


def test_with_vertices_keeps_topology(head2):
    moved = head2.with_vertices(head2.vertices * 2.0)
    assert moved.topology_tag == head2.topology_tag
    np.testing.assert_array_equal(moved.faces, head2.faces)
    assert moved.vertices is not head2.vertices
