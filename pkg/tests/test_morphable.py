import numpy as np
import pytest

from carimesh import morphable as M
from carimesh.synth import blend_corpus, head_template, seed_deformations


@pytest.fixture(scope="module")
def corpus():
    template = head_template(2)
    fields = seed_deformations(template, count=4, seed=1)
    meshes, weights = blend_corpus(template, fields, count=12, seed=1)
    return template, meshes, weights


def test_pca_two_point_closed_form():
    # two samples: the single component is the normalized difference and the
    # eigenvalue is half the squared distance (population covariance)
    base = head_template(2)
    delta = np.zeros_like(base.vertices)
    delta[:, 0] = 0.1
    a = base
    b = base.with_vertices(base.vertices + delta)
    basis = M.build_basis([a, b], d=1)
    np.testing.assert_allclose(
        basis.mean.reshape(-1, 3), (a.vertices + b.vertices) / 2, atol=1e-12)
    diff = (b.vertices - a.vertices).ravel()
    comp = basis.components[0]
    assert np.linalg.norm(comp) == pytest.approx(1.0, abs=1e-12)
    cosine = abs(comp @ diff) / np.linalg.norm(diff)
    assert cosine == pytest.approx(1.0, abs=1e-12)
    assert basis.eigenvalues[0] == pytest.approx(
        np.linalg.norm(diff) ** 2 / 4, rel=1e-10)


def test_rank_k_corpus_reconstructed_exactly(corpus):
    template, meshes, _ = corpus
    basis = M.build_basis(meshes, d=4)
    for mesh in meshes:
        coeffs = M.project(basis, mesh)
        rec = M.reconstruct(basis, coeffs)
        assert np.abs(rec.vertices - mesh.vertices).max() < 1e-10


def test_project_clamping(corpus):
    _, meshes, _ = corpus
    basis = M.build_basis(meshes, d=4)
    far = meshes[0].with_vertices(
        basis.mean.reshape(-1, 3)
        + 100 * np.sqrt(basis.eigenvalues[0]) * basis.components[0].reshape(-1, 3))
    coeffs = M.project(basis, far, clamp_sigmas=3.0)
    sigmas = np.abs(coeffs) / np.sqrt(basis.eigenvalues)
    assert sigmas.max() <= 3.0 + 1e-9


def test_pca_snap_is_projection(corpus):
    _, meshes, _ = corpus
    basis = M.build_basis(meshes, d=4)
    snapped = M.pca_snap(basis, meshes[3])
    twice = M.pca_snap(basis, snapped)
    np.testing.assert_allclose(twice.vertices, snapped.vertices, atol=1e-10)


def test_explained_variance_sums(corpus):
    _, meshes, _ = corpus
    eig, total = M.explained_variance(meshes)
    assert np.all(np.diff(eig) <= 1e-12)
    assert eig.sum() == pytest.approx(total, rel=1e-9)
    # the corpus is rank 4 by construction
    assert eig[:4].sum() / total > 1 - 1e-9


def test_interpolate_endpoints_and_midpoint(corpus):
    _, meshes, _ = corpus
    a, b = meshes[0], meshes[1]
    np.testing.assert_allclose(M.interpolate(a, b, 0.0).vertices, a.vertices)
    np.testing.assert_allclose(M.interpolate(a, b, 1.0).vertices, b.vertices)
    np.testing.assert_allclose(M.interpolate(a, b, 0.5).vertices,
                               (a.vertices + b.vertices) / 2, atol=1e-12)
    # extrapolation is linear too
    np.testing.assert_allclose(M.interpolate(a, b, 2.0).vertices,
                               2 * b.vertices - a.vertices, atol=1e-12)


def test_shape_variance_mask(corpus):
    template, meshes, _ = corpus
    n = template.n_vertices
    full = M.shape_variance(meshes)
    lo = M.shape_variance(meshes, mask=np.arange(n // 2))
    hi = M.shape_variance(meshes, mask=np.arange(n // 2, n))
    # masked averages recombine to the full average
    parts = (lo * (n // 2) + hi * (n - n // 2)) / n
    assert parts == pytest.approx(full, rel=1e-12)
    assert full > 0
    with pytest.raises(ValueError):
        M.shape_variance(meshes, mask=np.array([], dtype=int))


def test_basis_round_trip(tmp_path, corpus):
    _, meshes, _ = corpus
    basis = M.build_basis(meshes, d=3)
    path = tmp_path / "basis.bin"
    M.save_basis(basis, path)
    back = M.load_basis(path)
    np.testing.assert_allclose(back.mean, basis.mean, atol=0)
    np.testing.assert_allclose(back.components, basis.components, atol=0)
    np.testing.assert_allclose(back.eigenvalues, basis.eigenvalues, atol=0)
    np.testing.assert_array_equal(back.faces, basis.faces)
    assert back.topology_tag == basis.topology_tag


def test_region_masks_round_trip(tmp_path, head2):
    from carimesh.synth import region_masks
    masks = region_masks(head2)
    path = tmp_path / "masks.txt"
    M.save_region_masks(masks, path)
    back = M.load_region_masks(path)
    assert set(back) == set(masks)
    for name in masks:
        np.testing.assert_array_equal(back[name], masks[name])
