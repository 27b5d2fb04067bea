"""Evaluation metrics: Procrustes alignment, point-to-surface distance, MPJPE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spatial import SpatialIndex, closest_point_on_surface


@dataclass(frozen=True)
class SimilarityTransform:
    rotation: np.ndarray  # 3x3 proper rotation
    scale: float
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("rotation must be proper orthonormal")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def apply(self, points):
        return self.scale * (np.asarray(points) @ self.rotation.T) + self.translation

    def inverse(self):
        Rinv = self.rotation.T
        s = 1.0 / self.scale
        return SimilarityTransform(Rinv, s, -s * (Rinv @ self.translation))

    def compose(self, other):
        """Transform equal to applying ``other`` first, then self."""
        R = self.rotation @ other.rotation
        s = self.scale * other.scale
        t = self.scale * (self.rotation @ other.translation) + self.translation
        return SimilarityTransform(R, s, t)

    @staticmethod
    def identity():
        return SimilarityTransform(np.eye(3), 1.0, np.zeros(3))


@dataclass(frozen=True)
class MetricReport:
    metric: str
    value: float
    aligned: bool
    n_points: int

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value < 0:
            raise ValueError("metric value must be finite and non-negative")

    def csv_row(self):
        return f"{self.metric},{self.value:.9g},{int(self.aligned)},{self.n_points}"


def procrustes(source, target):
    """Least-squares similarity mapping source points onto target points.

    Closed form via the cross-covariance SVD with reflections excluded
    (Umeyama); minimizes sum ||s R p + t - q||^2.
    """
    p = np.asarray(source, dtype=np.float64)
    q = np.asarray(target, dtype=np.float64)
    if p.shape != q.shape or len(p) < 3:
        raise ValueError("need >= 3 corresponding point pairs")
    mu_p = p.mean(axis=0)
    mu_q = q.mean(axis=0)
    pc = p - mu_p
    qc = q - mu_q
    cov = qc.T @ pc / len(p)
    U, sv, Vt = np.linalg.svd(cov)
    var_p = (pc ** 2).sum() / len(p)
    if var_p <= 0 or sv[1] < 1e-15 * max(sv[0], 1e-300):
        raise ValueError("degenerate point configuration")
    sign = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        sign[2] = -1.0
    R = U @ np.diag(sign) @ Vt
    s = float((sv * sign).sum() / var_p)
    t = mu_q - s * (R @ mu_p)
    return SimilarityTransform(R, s, t)


def _mutual_pairs(pred_pts, gt_mesh, gt_index):
    """Closest-point pairs kept only when mutually nearest within the sample."""
    cp, _, _ = closest_point_on_surface(pred_pts, gt_mesh, gt_index)
    # mutual check: the sampled pred point must be the nearest sample to its
    # own surface foot point
    d2 = ((pred_pts[:, None, :] - cp[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=0)
    keep = nearest == np.arange(len(pred_pts))
    return pred_pts[keep], cp[keep]


def _principal_frame(centered):
    """Right-handed principal-axes frame of a centered point cloud.

    Axis signs follow the third moment along each axis so that two
    similarity-related clouds produce matching frames; a near-symmetric
    axis keeps its default sign.
    """
    cov = centered.T @ centered / len(centered)
    _, vecs = np.linalg.eigh(cov)  # columns, ascending eigenvalue
    R = vecs[:, ::-1].copy()
    skew = ((centered @ R) ** 3).mean(axis=0)
    scale = ((centered @ R) ** 2).mean(axis=0) ** 1.5
    rel = np.abs(skew) / np.maximum(scale, 1e-300)
    for k in range(3):
        if rel[k] > 1e-9 and skew[k] < 0:
            R[:, k] = -R[:, k]
    if np.linalg.det(R) < 0:
        R[:, int(np.argmin(rel))] *= -1.0
    return R


def p2s(pred_mesh, gt_mesh, align=True, sample_count=2000, seed=0,
        gt_index=None, vertex_mask=None):
    """Mean unidirectional point-to-surface distance, prediction -> truth.

    With align=True the prediction is first Procrustes-aligned (rotation,
    least-squares scale, translation) using mutual closest-point pairs over
    a seeded vertex subsample, iterated to convergence from a
    principal-axes initial guess.
    vertex_mask restricts the evaluated prediction vertices (e.g. a face
    region).
    """
    if pred_mesh.n_vertices == 0 or gt_mesh.n_faces == 0:
        raise ValueError("p2s needs non-empty meshes")
    if gt_index is None:
        gt_index = SpatialIndex(gt_mesh)
    pred = pred_mesh.vertices
    if align:
        rng = np.random.default_rng(seed)
        k = min(sample_count, len(pred))
        sample = pred[rng.choice(len(pred), size=k, replace=False)]
        # deterministic pre-normalization: match centroid and RMS radius of
        # the ground-truth vertices, so translation and scale differences
        # never depend on the closest-point correspondences
        gt_mu = gt_mesh.vertices.mean(axis=0)
        gt_rms = float(np.sqrt(((gt_mesh.vertices - gt_mu) ** 2).sum(axis=1).mean()))
        mu = sample.mean(axis=0)
        rms = float(np.sqrt(((sample - mu) ** 2).sum(axis=1).mean()))
        if rms <= 0:
            raise ValueError("degenerate prediction sample")
        s0 = gt_rms / rms
        R0 = _principal_frame(gt_mesh.vertices - gt_mu) @ _principal_frame(sample - mu).T
        transform = SimilarityTransform(R0, s0, gt_mu - s0 * (R0 @ mu))
        tol = 1e-12 * max(gt_rms, 1e-300)
        prev = transform.apply(sample)
        for _ in range(50):  # mutual-pair fits until the pose stabilizes
            src, dst = _mutual_pairs(prev, gt_mesh, gt_index)
            if len(src) < 3:
                break
            transform = procrustes(src, dst).compose(transform)
            cur = transform.apply(sample)
            motion = np.linalg.norm(cur - prev, axis=1).max()
            prev = cur
            if motion < tol:
                break
        pred = transform.apply(pred)
    if vertex_mask is not None:
        pred = pred[np.asarray(vertex_mask, dtype=np.int64)]
    _, _, dist = closest_point_on_surface(pred, gt_mesh, gt_index)
    return float(dist.mean())


def mpjpe(pred, gt, root_index):
    """Mean landmark position error after root alignment.

    Both sets are translated so the root landmark sits at the origin.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("landmark sets must have equal shapes")
    if not (0 <= root_index < len(pred)):
        raise IndexError(f"root index {root_index} out of range")
    p = pred - pred[root_index]
    g = gt - gt[root_index]
    return float(np.linalg.norm(p - g, axis=1).mean())


def summary_block(reports):
    lines = ["metric,value,aligned,n_points"]
    lines += [r.csv_row() for r in reports]
    width = max(len(r.metric) for r in reports)
    lines.append("")
    for r in reports:
        lines.append(f"{r.metric:<{width}}  {r.value:.6g}" +
                     ("  (aligned)" if r.aligned else ""))
    return "\n".join(lines)
