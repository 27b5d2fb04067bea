"""Landmark-guided optimal-step non-rigid ICP with PCA projection.

The template mesh is rigidly pre-aligned onto the target landmarks, then
deformed by one 4x3 affine transform per vertex.  Each step minimizes

    sum_i w_i ||X_i v_i - u_i||^2                          (data)
  + alpha * sum_{edges (i,j)} ||(X_i - X_j) G||_F^2        (stiffness)
  + beta  * sum_l ||X_l v_l - target_l||^2                 (landmarks)

with G = diag(1, 1, 1, gamma), solved as one sparse linear least-squares
problem in the stacked transforms (normal equations, sparse factorization).
The stiffness schedule relaxes from rigid to flexible; each relaxation
alternates closest-point correspondence search and solving.  Interleaved
PCA projection keeps the result in the span of a shape basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, MeshError, face_normals, vertex_normals
from .metrics import SimilarityTransform, p2s, procrustes
from .morphable import pca_snap
from .spatial import SpatialIndex, closest_point_on_surface


@dataclass(frozen=True)
class NicpConfig:
    alphas: tuple = (50.0, 20.0, 5.0, 2.0, 0.8)
    beta: float = 10.0
    gamma: float = 1.0
    max_distance_frac: float = 0.1  # of the target bounding-box diagonal
    max_normal_angle_deg: float = 60.0
    inner_iterations: int = 10
    motion_threshold_frac: float = 1e-5  # of the target diagonal
    use_rigid_init: bool = True

    def __post_init__(self):
        a = tuple(float(x) for x in self.alphas)
        if not a or any(x <= 0 for x in a):
            raise ValueError("stiffness values must be positive")
        if any(b <= c for b, c in zip(a, a[1:])):
            raise ValueError("stiffness schedule must be strictly decreasing")
        if self.beta < 0:
            raise ValueError("landmark weight must be non-negative")
        object.__setattr__(self, "alphas", a)


@dataclass
class Correspondences:
    """Per template vertex: closest target surface point and a 0/1 weight."""

    points: np.ndarray  # (V, 3)
    weights: np.ndarray  # (V,) in {0, 1}

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not np.all((self.weights == 0) | (self.weights == 1)):
            raise ValueError("correspondence weights must be 0 or 1")

    @property
    def pruned_fraction(self):
        return float(1.0 - self.weights.mean())


@dataclass
class RegistrationResult:
    m_nicp: Mesh
    m_pca: Mesh
    transform: SimilarityTransform  # canonical frame -> original target frame
    diagnostics: list  # per round: dict(round, p2s_nicp, p2s_pca, landmark_rms, pruned_fraction)


def rigid_landmark_align(template, template_landmark_ids, target_landmarks3d):
    """Similarity transform carrying template landmarks onto target ones.

    Returns (transform, transformed template).
    """
    ids = np.asarray(template_landmark_ids, dtype=np.int64)
    src = template.vertices[ids]
    tf = procrustes(src, np.asarray(target_landmarks3d, dtype=np.float64))
    return tf, template.with_vertices(tf.apply(template.vertices))


def build_correspondences(deformed, target, target_index, config=None):
    """Closest-point pairs pruned by distance and facing angle.

    A pair is dropped (weight 0) when its distance exceeds the configured
    fraction of the target diagonal, or the template vertex normal and the
    target face normal disagree by more than the angle threshold.
    """
    config = config or NicpConfig()
    pts, fids, dist = closest_point_on_surface(deformed.vertices, target, target_index)
    weights = np.ones(deformed.n_vertices)
    weights[dist > config.max_distance_frac * target.bbox_diagonal()] = 0.0
    src_n = vertex_normals(deformed)
    tgt_n = face_normals(target)[fids]
    cos_limit = np.cos(np.deg2rad(config.max_normal_angle_deg))
    weights[(src_n * tgt_n).sum(axis=1) < cos_limit] = 0.0
    return Correspondences(pts, weights)


def _homog_rows(vertices, ids=None):
    """Sparse rows [v_x v_y v_z 1] placed in the 4-column block of each id."""
    V = len(vertices)
    ids = np.arange(V) if ids is None else np.asarray(ids, dtype=np.int64)
    n = len(ids)
    rows = np.repeat(np.arange(n), 4)
    cols = (4 * ids[:, None] + np.arange(4)[None, :]).ravel()
    vals = np.concatenate([vertices[ids], np.ones((n, 1))], axis=1).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, 4 * V))


def _stiffness_matrix(mesh, gamma):
    """alpha-free stiffness block: edge incidence kron diag(1, 1, 1, gamma)."""
    edges = mesh.edges()
    E, V = len(edges), mesh.n_vertices
    inc = sp.csr_matrix(
        (np.concatenate([np.ones(E), -np.ones(E)]),
         (np.concatenate([np.arange(E), np.arange(E)]),
          np.concatenate([edges[:, 0], edges[:, 1]]))),
        shape=(E, V),
    )
    G = sp.diags([1.0, 1.0, 1.0, float(gamma)])
    return sp.kron(inc, G, format="csr")


def nicp_objective(X, template, stiffness, corr, landmark_ids, landmark_targets,
                   alpha, beta):
    """The step's quadratic objective at stacked transforms X (4V, 3)."""
    D = _homog_rows(template.vertices)
    data = float((corr.weights[:, None] * (D @ X - corr.points) ** 2).sum())
    stiff = alpha * float(((stiffness @ X) ** 2).sum())
    lm = 0.0
    if landmark_ids is not None and len(landmark_ids) and beta > 0:
        DL = _homog_rows(template.vertices, landmark_ids)
        lm = beta * float(((DL @ X - landmark_targets) ** 2).sum())
    return data + stiff + lm


def identity_transforms(n_vertices):
    """Stacked per-vertex transforms equal to the identity, (4V, 3)."""
    X = np.zeros((4 * n_vertices, 3))
    X[0::4, 0] = 1.0
    X[1::4, 1] = 1.0
    X[2::4, 2] = 1.0
    return X


def nicp_step(template, corr, stiffness, landmark_ids, landmark_targets,
              alpha, beta, dense_oracle=False):
    """One optimal-step solve; returns (deformed vertices, transforms X).

    dense_oracle=True solves the identical quadratic with a dense
    least-squares factorization (small fixtures only) for cross-checking.
    """
    V = template.n_vertices
    D = _homog_rows(template.vertices)
    W = sp.diags(corr.weights)
    blocks_A = [np.sqrt(alpha) * stiffness, W @ D]
    blocks_B = [np.zeros((stiffness.shape[0], 3)), corr.weights[:, None] * corr.points]
    if landmark_ids is not None and len(landmark_ids) and beta > 0:
        DL = _homog_rows(template.vertices, landmark_ids)
        blocks_A.append(np.sqrt(beta) * DL)
        blocks_B.append(np.sqrt(beta) * np.asarray(landmark_targets, dtype=np.float64))
    A = sp.vstack(blocks_A, format="csr")
    B = np.vstack(blocks_B)
    if dense_oracle:
        if V > 500:
            raise ValueError("dense oracle limited to small fixtures")
        X, _, rank, _ = np.linalg.lstsq(A.toarray(), B, rcond=None)
        if rank < 4 * V:
            raise MeshError(f"singular registration system (rank {rank} < {4 * V})")
        return (D @ X), X
    AtA = (A.T @ A).tocsc()
    AtB = A.T @ B
    try:
        solve = spla.factorized(AtA)
    except RuntimeError as exc:
        raise MeshError(f"singular registration system: {exc}") from exc
    X = np.column_stack([solve(AtB[:, k]) for k in range(3)])
    if not np.all(np.isfinite(X)):
        raise MeshError(
            "singular registration system: empty data term with zero landmark weight"
        )
    return (D @ X), X


def nicp(template, target, landmark_ids, target_landmarks3d, config=None,
         target_index=None):
    """Full stiffness-scheduled registration.

    Returns (deformed mesh, diagnostics list, final transforms X).  The
    template is used as-is; apply rigid_landmark_align first when frames
    differ.
    """
    config = config or NicpConfig()
    if target_index is None:
        target_index = SpatialIndex(target)
    current = template
    diag = target.bbox_diagonal()
    lm_targets = (np.asarray(target_landmarks3d, dtype=np.float64)
                  if target_landmarks3d is not None else None)
    stiffness = _stiffness_matrix(template, config.gamma)
    history = []
    X = identity_transforms(template.n_vertices)
    for alpha in config.alphas:
        for _ in range(config.inner_iterations):
            corr = build_correspondences(current, target, target_index, config)
            new_vertices, X = nicp_step(
                current, corr, stiffness, landmark_ids, lm_targets,
                alpha, config.beta if lm_targets is not None else 0.0,
            )
            motion = np.linalg.norm(new_vertices - current.vertices, axis=1).max()
            current = current.with_vertices(new_vertices)
            if motion < config.motion_threshold_frac * diag:
                break
        lm_rms = 0.0
        if lm_targets is not None and landmark_ids is not None:
            res = current.vertices[np.asarray(landmark_ids)] - lm_targets
            lm_rms = float(np.sqrt((res ** 2).sum(axis=1).mean()))
        history.append({
            "alpha": alpha,
            "landmark_rms": lm_rms,
            "pruned_fraction": corr.pruned_fraction,
        })
    return current, history, X


def register_with_pca(template, target, landmark_ids, target_landmarks3d,
                      basis, config=None, outer_rounds=3, target_index=None):
    """Alternating NICP and PCA projection in the basis' canonical frame.

    The target (and its landmarks) are first carried into the canonical
    frame by the inverse of the landmark similarity alignment; rounds of
    NICP -> pca_snap run there, each seeding the next.  The result holds
    canonical-frame meshes plus the similarity transform back to the
    original target frame.
    """
    config = config or NicpConfig()
    if outer_rounds < 1:
        raise ValueError("outer_rounds must be >= 1")
    lm_tgt = np.asarray(target_landmarks3d, dtype=np.float64)
    if config.use_rigid_init:
        tf, _ = rigid_landmark_align(template, landmark_ids, lm_tgt)
    else:
        tf = SimilarityTransform.identity()
    inv = tf.inverse()
    target_c = target.with_vertices(inv.apply(target.vertices))
    lm_c = inv.apply(lm_tgt)
    index_c = SpatialIndex(target_c)
    current = template
    diagnostics = []
    m_nicp = m_pca = None
    for rnd in range(outer_rounds):
        m_nicp, history, _ = nicp(current, target_c, landmark_ids, lm_c,
                                  config, index_c)
        m_pca = pca_snap(basis, m_nicp)
        diagnostics.append({
            "round": rnd,
            "p2s_nicp": p2s(m_nicp, target_c, align=False, gt_index=index_c),
            "p2s_pca": p2s(m_pca, target_c, align=False, gt_index=index_c),
            "landmark_rms": history[-1]["landmark_rms"],
            "pruned_fraction": history[-1]["pruned_fraction"],
        })
        current = m_pca
    return RegistrationResult(m_nicp, m_pca, tf, diagnostics)
