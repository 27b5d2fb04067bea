"""PCA shape space over topology-consistent meshes.

A basis holds the mean shape, orthonormal components over stacked
(x, y, z) vertex coordinates and the per-component population variances.
Projection is plain orthonormal least squares with optional sigma clamping.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh, MeshError

_BASIS_MAGIC = "carimesh-shapebasis 1"


class ShapeBasis:
    def __init__(self, mean, components, eigenvalues, faces, topology_tag=None):
        self.mean = np.asarray(mean, dtype=np.float64).ravel()
        self.components = np.asarray(components, dtype=np.float64)
        self.eigenvalues = np.asarray(eigenvalues, dtype=np.float64).ravel()
        self.faces = np.asarray(faces, dtype=np.int32)
        self.topology_tag = topology_tag
        d, m = self.components.shape
        if m != self.mean.size or d != self.eigenvalues.size:
            raise ValueError("inconsistent basis shapes")
        gram = self.components @ self.components.T
        if np.abs(gram - np.eye(d)).max() > 1e-8:
            raise ValueError("basis components are not orthonormal")
        if np.any(np.diff(self.eigenvalues) > 1e-12):
            raise ValueError("eigenvalues must be sorted non-increasing")

    @property
    def d(self):
        return len(self.eigenvalues)

    @property
    def n_vertices(self):
        return self.mean.size // 3

    def _check_mesh(self, mesh):
        if mesh.n_vertices != self.n_vertices:
            raise MeshError(
                f"mesh has {mesh.n_vertices} vertices, basis expects {self.n_vertices}"
            )
        if self.topology_tag and mesh.topology_tag and mesh.topology_tag != self.topology_tag:
            raise MeshError(
                f"topology mismatch: {mesh.topology_tag!r} vs basis {self.topology_tag!r}"
            )


def _stack(meshes):
    n = meshes[0].n_vertices
    tag = meshes[0].topology_tag
    for i, m in enumerate(meshes):
        if m.n_vertices != n or (tag and m.topology_tag and m.topology_tag != tag):
            raise MeshError(f"mesh {i} does not share the common topology")
    return np.stack([m.vertices.ravel() for m in meshes], axis=1)  # (3N, p)


def build_basis(meshes, d):
    """PCA over a topology-consistent corpus (population convention).

    Components are the top-d left singular vectors of the centered shape
    matrix; eigenvalues are the matching variances (singular value^2 / p).
    """
    if len(meshes) < 2:
        raise MeshError("need at least two meshes to build a basis")
    p = len(meshes)
    if not (1 <= d <= p - 1):
        raise ValueError(f"d must be in [1, {p - 1}], got {d}")
    S = _stack(meshes)
    mean = S.mean(axis=1)
    centered = S - mean[:, None]
    U, sv, _ = np.linalg.svd(centered, full_matrices=False)
    eig = (sv ** 2) / p
    return ShapeBasis(
        mean, U[:, :d].T, eig[:d], meshes[0].faces, meshes[0].topology_tag
    )


def explained_variance(meshes):
    """Per-component variances plus the total centered variance."""
    S = _stack(meshes)
    centered = S - S.mean(axis=1, keepdims=True)
    sv = np.linalg.svd(centered, compute_uv=False)
    eig = (sv ** 2) / S.shape[1]
    total = float(np.sum(centered ** 2)) / S.shape[1]
    return eig, total


def reconstruct(basis, coeffs):
    coeffs = np.asarray(coeffs, dtype=np.float64).ravel()
    if len(coeffs) != basis.d:
        raise ValueError(f"expected {basis.d} coefficients, got {len(coeffs)}")
    flat = basis.mean + coeffs @ basis.components
    return Mesh(flat.reshape(-1, 3), basis.faces, basis.topology_tag)


def project(basis, mesh, clamp_sigmas=None):
    """Shape coefficients of a mesh: a_i = S_i . (x - mean).

    With clamp_sigmas set, each coefficient is clamped to
    +/- clamp_sigmas * sqrt(eigenvalue_i).
    """
    basis._check_mesh(mesh)
    a = basis.components @ (mesh.vertices.ravel() - basis.mean)
    if clamp_sigmas is not None:
        lim = clamp_sigmas * np.sqrt(basis.eigenvalues)
        a = np.clip(a, -lim, lim)
    return a


def pca_snap(basis, mesh, clamp_sigmas=None):
    """Orthogonal projection of a mesh onto the basis span (idempotent)."""
    return reconstruct(basis, project(basis, mesh, clamp_sigmas))


def interpolate(mesh_a, mesh_b, t):
    """Per-vertex linear blend; t outside [0, 1] extrapolates."""
    if mesh_a.n_vertices != mesh_b.n_vertices:
        raise MeshError("interpolation requires identical topology")
    return mesh_a.with_vertices((1.0 - t) * mesh_a.vertices + t * mesh_b.vertices)


def shape_variance(meshes, mask=None):
    """Mean squared per-vertex displacement from the corpus mean shape.

    Averaged over the masked vertices and all meshes (population
    convention); mask is a vertex-index array, or None for all vertices.
    """
    S = _stack(meshes)  # (3N, p)
    disp = S - S.mean(axis=1, keepdims=True)
    sq = (disp ** 2).reshape(-1, 3, S.shape[1]).sum(axis=1)  # (N, p) squared displacement
    if mask is not None:
        mask = np.asarray(mask, dtype=np.int64)
        if mask.size == 0:
            raise ValueError("empty region mask")
        sq = sq[mask]
    return float(sq.mean())


# ---------------------------------------------------------------------------
# file formats

def save_basis(basis, path):
    with open(path, "wb") as fh:
        header = (
            f"{_BASIS_MAGIC}\n"
            f"n_vertices {basis.n_vertices}\n"
            f"d {basis.d}\n"
            f"n_faces {len(basis.faces)}\n"
            f"topology_tag {basis.topology_tag or '-'}\n"
            "data\n"
        )
        fh.write(header.encode("ascii"))
        fh.write(basis.mean.astype("<f8").tobytes())
        fh.write(basis.components.astype("<f8").tobytes())
        fh.write(basis.eigenvalues.astype("<f8").tobytes())
        fh.write(basis.faces.astype("<i4").tobytes())


def load_basis(path):
    with open(path, "rb") as fh:
        if fh.readline().decode("ascii").strip() != _BASIS_MAGIC:
            raise ValueError(f"{path}: not a shape basis file")
        fields = {}
        for _ in range(4):
            k, v = fh.readline().decode("ascii").split()
            fields[k] = v
        if fh.readline().decode("ascii").strip() != "data":
            raise ValueError(f"{path}: missing data marker")
        n = int(fields["n_vertices"])
        d = int(fields["d"])
        nf = int(fields["n_faces"])
        tag = None if fields["topology_tag"] == "-" else fields["topology_tag"]
        mean = np.frombuffer(fh.read(8 * 3 * n), dtype="<f8")
        comps = np.frombuffer(fh.read(8 * 3 * n * d), dtype="<f8").reshape(d, 3 * n)
        eig = np.frombuffer(fh.read(8 * d), dtype="<f8")
        faces = np.frombuffer(fh.read(4 * 3 * nf), dtype="<i4").reshape(nf, 3)
        return ShapeBasis(mean, comps, eig, faces, tag)


def save_region_masks(masks, path):
    """masks: dict name -> vertex index array."""
    with open(path, "w") as fh:
        for name in sorted(masks.keys()):
            idx = " ".join(str(int(i)) for i in masks[name])
            fh.write(f"{name} {idx}\n")


def load_region_masks(path):
    masks = {}
    with open(path) as fh:
        for raw in fh:
            parts = raw.split()
            if not parts:
                continue
            masks[parts[0]] = np.array([int(x) for x in parts[1:]], dtype=np.int64)
    return masks
