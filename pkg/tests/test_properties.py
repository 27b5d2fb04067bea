"""Randomized invariant checks driven by hypothesis."""

import numpy as np
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from carimesh import metrics
from carimesh.gcn import normalize_adjacency, smooth_l1
from carimesh.voxel import VoxelGrid

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=1, max_size=30))
def test_smooth_l1_nonnegative_even_and_bounded(xs):
    x = torch.tensor(xs, dtype=torch.float64)
    val = float(smooth_l1(x))
    assert val >= 0.0
    assert float(smooth_l1(-x)) == val
    # never exceeds the absolute loss, never lags it by more than the knee
    linear = float(torch.mean(torch.abs(x)))
    assert val <= linear + 1e-12
    assert val >= linear - 0.5


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=12), st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_normalized_adjacency_spectrum(n, seed):
    # symmetric normalization keeps eigenvalues within [-1, 1]
    rng = np.random.default_rng(seed)
    A = (rng.random((n, n)) > 0.5).astype(float)
    A = np.maximum(A, A.T)
    np.fill_diagonal(A, 1.0)
    A_hat = np.asarray(normalize_adjacency(A))
    eig = np.linalg.eigvalsh(A_hat)
    assert eig.min() >= -1.0 - 1e-9
    assert eig.max() <= 1.0 + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1),
       st.floats(min_value=0.05, max_value=20.0))
def test_procrustes_exact_on_similarities(seed, scale):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(10, 3))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    tf = metrics.SimilarityTransform(q, scale, rng.normal(size=3))
    fit = metrics.procrustes(pts, tf.apply(pts))
    scatter = np.abs(pts - pts.mean(axis=0)).max() + 1.0
    assert np.abs(fit.apply(pts) - tf.apply(pts)).max() < 1e-8 * scale * scatter


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_trilinear_within_node_range(seed):
    rng = np.random.default_rng(seed)
    grid = VoxelGrid(np.zeros(3), np.ones(3), (3, 4, 5))
    grid.set_flat_values(rng.random(3 * 4 * 5))
    queries = rng.random((30, 3)) * 2 - 0.5  # includes out-of-box clamping
    out = grid.trilinear(queries)
    assert out.min() >= grid.values.min() - 1e-12
    assert out.max() <= grid.values.max() + 1e-12
