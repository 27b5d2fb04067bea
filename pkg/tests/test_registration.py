import numpy as np
import pytest

from carimesh import registration as R
from carimesh.metrics import SimilarityTransform, p2s
from carimesh.morphable import build_basis, pca_snap
from carimesh.spatial import SpatialIndex
from carimesh.synth import (blend_corpus, head_template, icosphere,
                            landmark_vertex_ids, seed_deformations)


@pytest.fixture(scope="module")
def small_target(head2, lm_ids2):
    fields = seed_deformations(head2, count=3, seed=2)
    meshes, _ = blend_corpus(head2, fields, count=1, coeff_scale=0.6, seed=2)
    return meshes[0]


@pytest.fixture(scope="module")
def lm_ids2(head2, scheme):
    return landmark_vertex_ids(head2, scheme)


def test_rigid_landmark_align_exact(head2, lm_ids2):
    angle = np.deg2rad(30)
    rot = np.array([[np.cos(angle), -np.sin(angle), 0],
                    [np.sin(angle), np.cos(angle), 0],
                    [0, 0, 1.0]])
    tf_true = SimilarityTransform(rot, 1.4, np.array([0.2, -0.1, 0.5]))
    target_lm = tf_true.apply(head2.vertices[lm_ids2])
    tf, moved = R.rigid_landmark_align(head2, lm_ids2, target_lm)
    np.testing.assert_allclose(moved.vertices[lm_ids2], target_lm, atol=1e-10)
    assert tf.scale == pytest.approx(1.4, rel=1e-10)


def test_identity_transforms_objective_zero(head2, lm_ids2):
    X = R.identity_transforms(head2.n_vertices)
    stiffness = R._stiffness_matrix(head2, gamma=1.0)
    corr = R.Correspondences(head2.vertices.copy(),
                             np.ones(head2.n_vertices))
    value = R.nicp_objective(X, head2, stiffness, corr, lm_ids2,
                             head2.vertices[lm_ids2], alpha=5.0, beta=10.0)
    assert value < 1e-20


def test_nicp_step_sparse_matches_dense(lm_ids2):
    mesh = icosphere(1)  # 42 vertices keeps the dense system tractable
    rng = np.random.default_rng(3)
    corr = R.Correspondences(mesh.vertices + rng.normal(scale=0.05,
                                                        size=mesh.vertices.shape),
                             (rng.random(mesh.n_vertices) > 0.2).astype(float))
    stiffness = R._stiffness_matrix(mesh, gamma=1.0)
    lm = np.array([0, 5, 11])
    lm_targets = mesh.vertices[lm] + 0.02
    verts_s, X_s = R.nicp_step(mesh, corr, stiffness, lm, lm_targets, 5.0, 10.0)
    verts_d, X_d = R.nicp_step(mesh, corr, stiffness, lm, lm_targets, 5.0, 10.0,
                               dense_oracle=True)
    np.testing.assert_allclose(verts_s, verts_d, atol=1e-8)
    np.testing.assert_allclose(X_s, X_d, atol=1e-8)


def test_build_correspondences_prunes_far_targets(head2, index2):
    far = head2.with_vertices(head2.vertices + np.array([10.0, 0, 0]))
    corr = R.build_correspondences(far, head2, index2)
    assert corr.weights.sum() == 0

    near = R.build_correspondences(head2, head2, index2)
    assert near.weights.mean() > 0.99
    np.testing.assert_allclose(near.points[near.weights > 0],
                               head2.vertices[near.weights > 0], atol=1e-9)


def test_nicp_self_registration(head2, index2, lm_ids2):
    result, history, X = R.nicp(head2, head2, lm_ids2,
                                head2.vertices[lm_ids2],
                                target_index=index2)
    assert p2s(result, head2, align=False) < 1e-6 * head2.bbox_diagonal()


def test_nicp_recovers_deformation(head2, lm_ids2, small_target):
    target_index = SpatialIndex(small_target)
    before = p2s(head2, small_target, align=False)
    result, history, _ = R.nicp(head2, small_target, lm_ids2,
                                small_target.vertices[lm_ids2],
                                target_index=target_index)
    after = p2s(result, small_target, align=False)
    assert after < 0.1 * before


def test_landmark_guidance_beats_unguided(head2, lm_ids2, small_target):
    from carimesh.synth import exaggerated_nose
    target = exaggerated_nose(head2, factor=3.0)
    target_index = SpatialIndex(target)
    target_lm = target.vertices[lm_ids2]
    cfg_guided = R.NicpConfig(use_rigid_init=False)
    cfg_free = R.NicpConfig(beta=0.0, use_rigid_init=False)
    guided, _, _ = R.nicp(head2, target, lm_ids2, target_lm,
                          config=cfg_guided, target_index=target_index)
    free, _, _ = R.nicp(head2, target, lm_ids2, target_lm,
                        config=cfg_free, target_index=target_index)
    rms_guided = np.sqrt(np.mean(np.sum(
        (guided.vertices[lm_ids2] - target_lm) ** 2, axis=1)))
    rms_free = np.sqrt(np.mean(np.sum(
        (free.vertices[lm_ids2] - target_lm) ** 2, axis=1)))
    assert rms_guided < rms_free


def test_register_with_pca_returns_span_member(head2, lm_ids2):
    fields = seed_deformations(head2, count=3, seed=4)
    meshes, _ = blend_corpus(head2, fields, count=8, coeff_scale=0.5, seed=4)
    basis = build_basis(meshes, d=3)
    target = meshes[5]
    result = R.register_with_pca(head2, target, lm_ids2,
                                 target.vertices[lm_ids2], basis,
                                 config=R.NicpConfig(use_rigid_init=False),
                                 outer_rounds=2)
    snapped = pca_snap(basis, result.m_pca)
    span_residual = np.abs(snapped.vertices - result.m_pca.vertices).max()
    assert span_residual < 1e-10
    assert len(result.diagnostics) == 2
    assert result.m_nicp.n_vertices == head2.n_vertices


def test_nicp_config_validation():
    with pytest.raises(ValueError):
        R.NicpConfig(alphas=())
    with pytest.raises(ValueError):
        R.NicpConfig(alphas=(5.0, -1.0))
    with pytest.raises(ValueError):
        R.NicpConfig(beta=-2.0)
    with pytest.raises(ValueError):
        R.NicpConfig(alphas=(5.0, 5.0, 2.0))
