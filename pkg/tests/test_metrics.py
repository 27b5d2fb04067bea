import numpy as np
import pytest

from carimesh import metrics as X


def random_similarity(rng, scale_range=(0.2, 5.0)):
    A = rng.normal(size=(3, 3))
    q, _ = np.linalg.qr(A)
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    s = rng.uniform(*scale_range)
    t = rng.normal(scale=2.0, size=3)
    return X.SimilarityTransform(q, s, t)


def test_procrustes_recovers_random_similarity(head2, rng):
    pts = head2.vertices
    for _ in range(5):
        tf = random_similarity(rng)
        moved = tf.apply(pts)
        fit = X.procrustes(pts, moved)
        np.testing.assert_allclose(fit.apply(pts), moved, atol=1e-9)
        assert fit.scale == pytest.approx(tf.scale, rel=1e-9)


def test_similarity_transform_algebra(rng):
    tf = random_similarity(rng)
    pts = rng.normal(size=(40, 3))
    np.testing.assert_allclose(tf.inverse().apply(tf.apply(pts)), pts, atol=1e-10)
    other = random_similarity(rng)
    np.testing.assert_allclose(
        tf.compose(other).apply(pts), tf.apply(other.apply(pts)), atol=1e-10)
    ident = X.SimilarityTransform.identity()
    np.testing.assert_allclose(ident.apply(pts), pts, atol=0)


def test_p2s_self_is_zero(head2):
    assert X.p2s(head2, head2) < 1e-12


def test_p2s_similarity_invariant(head2, rng):
    for _ in range(3):
        tf = random_similarity(rng)
        moved = head2.with_vertices(tf.apply(head2.vertices))
        assert X.p2s(moved, head2) < 1e-10


def test_p2s_no_align_detects_offset(head2):
    moved = head2.with_vertices(head2.vertices + np.array([0.5, 0, 0]))
    assert X.p2s(moved, head2) < 1e-10
    assert X.p2s(moved, head2, align=False) > 0.05


def test_p2s_vertex_mask(head2):
    # perturb only the back: the front-mask distance should stay near zero
    verts = head2.vertices.copy()
    back = verts[:, 2] < -0.3
    verts[back] *= 1.1
    moved = head2.with_vertices(verts)
    front = np.flatnonzero(head2.vertices[:, 2] > 0.3)
    masked = X.p2s(moved, head2, align=False, vertex_mask=front)
    full = X.p2s(moved, head2, align=False)
    assert masked < 1e-9
    assert full > masked


def test_mpjpe_translation_invariance(rng):
    pred = rng.normal(size=(44, 3))
    gt = rng.normal(size=(44, 3))
    base = X.mpjpe(pred, gt, root_index=0)
    shifted = X.mpjpe(pred + np.array([3.0, -2.0, 1.0]), gt, root_index=0)
    assert shifted == pytest.approx(base, abs=1e-12)


def test_mpjpe_zero_on_translated_copy(rng):
    gt = rng.normal(size=(44, 3))
    assert X.mpjpe(gt + 5.0, gt, root_index=7) < 1e-12


def test_csv_row_format():
    report = X.MetricReport("p2s", 0.125, True, 2000)
    row = report.csv_row()
    assert "p2s" in row and "0.125" in row
