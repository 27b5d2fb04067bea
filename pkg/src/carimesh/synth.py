"""Synthetic head corpus for desk-scale verification.

A subdivided icosphere deformed by radial Gaussian bumps (nose, ears, chin,
brow) serves as the template; because every deformation is radial the mesh
stays star-shaped and watertight.  Each of the 44 canonical landmarks is
bound to the vertex best aligned with a named direction.  Corpora are
blends of a small set of seeded radial deformation fields, so they live
exactly in a low-rank shape space with known coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh
from .spatial import SpatialIndex, Ray, ray_intersect
from .views import default_scheme, project_landmarks, initialize_landmarks3D
from .field import FeatureVolumeInput


def icosphere(subdivisions=3):
    """Unit icosphere; 42/162/642/2562 vertices for 1-4 subdivisions."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        verts = list(verts)
        midpoint = {}
        new_faces = []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        verts = np.asarray(verts)
        faces = new_faces
    return Mesh(verts, np.asarray(faces, dtype=np.int64))


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def radial_bumps(unit_verts, bumps):
    """Radius multiplier field: 1 + sum of Gaussian lobes on the sphere.

    bumps is a list of (center direction, amplitude, angular width).
    """
    r = np.ones(len(unit_verts))
    for center, amp, width in bumps:
        c = _unit(center)
        r += amp * np.exp(-(1.0 - unit_verts @ c) / (width * width))
    return r


_HEAD_BUMPS = (
    ((0.0, -0.1, 1.0), 0.25, 0.45),   # nose
    ((-1.0, 0.0, 0.0), 0.18, 0.35),   # subject-right ear (camera side -x)
    ((1.0, 0.0, 0.0), 0.18, 0.35),    # subject-left ear (+x)
    ((0.0, -0.85, 0.5), 0.12, 0.5),   # chin
    ((0.0, 0.55, 0.8), 0.08, 0.6),    # brow ridge
    ((0.0, 0.2, -1.0), 0.10, 0.8),    # back of the skull
)


def head_template(subdivisions=3):
    """The synthetic head: bumped icosphere facing +z, +y up."""
    sphere = icosphere(subdivisions)
    r = radial_bumps(sphere.vertices, _HEAD_BUMPS)
    return Mesh(sphere.vertices * r[:, None], sphere.faces,
                topology_tag=f"synth-head-{sphere.n_vertices}")


def _landmark_directions():
    """Named direction per canonical landmark (subject faces +z, right=-x)."""
    dirs = {}
    for i in range(9):  # jaw sweep, subject-right to subject-left
        phi = np.deg2rad(-80.0 + 20.0 * i)
        dirs[f"jaw_{i}"] = (np.sin(phi), -0.55, 0.75 * np.cos(phi))
    for k, x in enumerate((-0.55, -0.4, -0.25, -0.12)):
        dirs[f"brow_r_{k}"] = (x, 0.5, 0.85)
    for k, x in enumerate((0.12, 0.25, 0.4, 0.55)):
        dirs[f"brow_l_{k}"] = (x, 0.5, 0.85)
    dirs["eye_r_outer"] = (-0.45, 0.25, 0.85)
    dirs["eye_r_top"] = (-0.3, 0.33, 0.9)
    dirs["eye_r_inner"] = (-0.15, 0.25, 0.95)
    dirs["eye_r_bottom"] = (-0.3, 0.17, 0.9)
    dirs["eye_l_inner"] = (0.15, 0.25, 0.95)
    dirs["eye_l_top"] = (0.3, 0.33, 0.9)
    dirs["eye_l_outer"] = (0.45, 0.25, 0.85)
    dirs["eye_l_bottom"] = (0.3, 0.17, 0.9)
    dirs["nose_top"] = (0.0, 0.12, 1.0)
    dirs["nose_bridge"] = (0.0, 0.0, 1.0)
    dirs["nose_tip"] = (0.0, -0.12, 1.0)
    dirs["nostril_r"] = (-0.12, -0.2, 0.95)
    dirs["nostril_l"] = (0.12, -0.2, 0.95)
    for i in range(8):  # mouth ring
        a = 2.0 * np.pi * i / 8.0
        dirs[f"mouth_{i}"] = (0.16 * np.cos(a), -0.42 + 0.1 * np.sin(a), 0.9)
    dirs["ear_r_top"] = (-1.0, 0.18, 0.0)
    dirs["ear_r_mid"] = (-1.0, 0.0, 0.05)
    dirs["ear_r_lobe"] = (-1.0, -0.18, 0.0)
    dirs["ear_l_top"] = (1.0, 0.18, 0.0)
    dirs["ear_l_mid"] = (1.0, 0.0, 0.05)
    dirs["ear_l_lobe"] = (1.0, -0.18, 0.0)
    return dirs


def landmark_vertex_ids(mesh, scheme=None):
    """Bind each canonical landmark to a distinct template vertex id."""
    scheme = scheme or default_scheme()
    dirs = _landmark_directions()
    unit = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
    taken = set()
    ids = np.empty(scheme.n_landmarks, dtype=np.int64)
    for i, name in enumerate(scheme.names):
        score = unit @ _unit(dirs[name])
        for vid in np.argsort(-score):
            if int(vid) not in taken:
                ids[i] = int(vid)
                taken.add(int(vid))
                break
    return ids


def seed_deformations(template, count=5, amplitude=0.08, seed=0):
    """Seeded radial deformation fields (each (V, 3)), linearly independent."""
    rng = np.random.default_rng(seed)
    unit = template.vertices / np.linalg.norm(template.vertices, axis=1, keepdims=True)
    fields = []
    for _ in range(count):
        bumps = [(rng.normal(size=3), rng.uniform(0.5, 1.0) * amplitude,
                  rng.uniform(0.35, 0.7)) for _ in range(4)]
        r = radial_bumps(unit, bumps) - 1.0
        fields.append(template.vertices * r[:, None])
    return fields


def blend_corpus(template, fields, count=20, coeff_scale=1.0, seed=0):
    """Corpus of blended heads plus the blend weights used, (count, rank)."""
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-coeff_scale, coeff_scale, size=(count, len(fields)))
    meshes = []
    for w in weights:
        disp = sum(wi * f for wi, f in zip(w, fields))
        meshes.append(template.with_vertices(template.vertices + disp))
    return meshes, weights


def exaggerated_nose(template, factor=4.0):
    """Caricature fixture: the nose bump grown by ``factor``."""
    unit = template.vertices / np.linalg.norm(template.vertices, axis=1, keepdims=True)
    center, amp, width = _HEAD_BUMPS[0]
    extra = radial_bumps(unit, [(center, amp * (factor - 1.0), width)]) - 1.0
    return template.with_vertices(template.vertices * (1.0 + extra)[:, None])


def region_masks(template):
    """Vertex-id masks for the evaluation regions (face = frontal patch)."""
    unit = template.vertices / np.linalg.norm(template.vertices, axis=1, keepdims=True)
    face = np.nonzero(unit[:, 2] > 0.3)[0]
    head = np.arange(template.n_vertices)
    return {"face": face, "head": head}


def stub_node_features(p2d, image_size, channels=16, seed=0):
    """Deterministic stand-in for per-landmark image features.

    A fixed random projection of the normalized pixel coordinates through a
    tanh, so nearby detections give nearby features.
    """
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(2, channels))
    b = rng.normal(size=channels)
    uv = np.asarray(p2d, dtype=np.float64) / np.asarray(image_size, dtype=np.float64)
    return np.tanh(uv @ W + b)


def depth_feature_volume(mesh, index, camera):
    """(front depth, back depth, mask) raster of the mesh under a camera.

    Sampled once per image pixel; pixels that miss the mesh hold the padded
    far/near depths with mask 0.  Use a small-image rig (e.g. 64x64) for
    toy fixtures — the cost is two ray casts per pixel.
    """
    w, h = camera.image_size
    lo, hi = mesh.bounds()
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    depth_range = camera.project(corners)[:, 2]
    far, near = depth_range.max() + 1.0, depth_range.min() - 1.0
    vol = np.zeros((w, h, 3))
    vol[:, :, 0], vol[:, :, 1] = far, near
    z_start = -near + 1.0
    for i in range(w):
        for j in range(h):
            ray = camera.pixel_ray(np.array([float(i), float(j)]), z_start)
            hit = ray_intersect(ray, mesh, index)
            if hit is None:
                continue
            behind = Ray(ray.origin + (hit[0] + 1e-9) * ray.direction, ray.direction)
            hit2 = ray_intersect(behind, mesh, index)
            d_front = camera.project(hit[2][None])[0, 2]
            d_back = (camera.project(hit2[2][None])[0, 2]
                      if hit2 is not None else d_front)
            vol[i, j] = [d_front, d_back, 1.0]
    return FeatureVolumeInput(vol, camera)


def save_landmark_ids(ids, path):
    """One 'canonical-index vertex-id' pair per line."""
    with open(path, "w") as fh:
        for i, vid in enumerate(np.asarray(ids, dtype=np.int64)):
            fh.write(f"{i} {int(vid)}\n")


def load_landmark_ids(path):
    pairs = {}
    with open(path) as fh:
        for raw in fh:
            parts = raw.split()
            if parts:
                pairs[int(parts[0])] = int(parts[1])
    if sorted(pairs) != list(range(len(pairs))):
        raise ValueError(f"{path}: landmark indices must be 0..n-1 without gaps")
    return np.array([pairs[i] for i in range(len(pairs))], dtype=np.int64)


@dataclass
class SyntheticCorpusSpec:
    count: int = 20
    seed: int = 0
    subdivisions: int = 3
    rank: int = 4
    coeff_scale: float = 1.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("corpus count must be >= 1")
        if self.rank < 1:
            raise ValueError("corpus rank must be >= 1")


def make_corpus(spec=None):
    """(template, landmark ids, corpus meshes, blend weights, seed fields)."""
    spec = spec or SyntheticCorpusSpec()
    template = head_template(spec.subdivisions)
    lm_ids = landmark_vertex_ids(template)
    fields = seed_deformations(template, count=spec.rank, seed=spec.seed)
    meshes, weights = blend_corpus(template, fields, spec.count,
                                   spec.coeff_scale, spec.seed + 1)
    return template, lm_ids, meshes, weights, fields


def make_gcn_sample(mesh, lm_ids, scheme, rig, noise_px=0.0,
                    feature_channels=16, seed=0, index=None):
    """One VC-GCN training sample from a synthetic head with GT landmarks."""
    if index is None:
        index = SpatialIndex(mesh)
    L_gt = mesh.vertices[np.asarray(lm_ids)]
    P_gt = project_landmarks(L_gt, rig, scheme)
    P_hat = {}
    rng = np.random.default_rng(seed)
    for view in sorted(P_gt.keys()):
        noise = rng.normal(scale=noise_px, size=P_gt[view].shape) if noise_px > 0 else 0.0
        P_hat[view] = P_gt[view] + noise
    L_init, per_view, _ = initialize_landmarks3D(mesh, index, P_hat, rig, scheme)
    features = {}
    for view in sorted(P_hat.keys()):
        img_feat = stub_node_features(P_hat[view], rig[view].image_size,
                                      feature_channels, seed=seed)
        features[view] = np.concatenate([img_feat, per_view[view]], axis=1)
    return {"features": features, "L_init": L_init, "L_gt": L_gt,
            "P_hat": P_hat, "P_gt": P_gt, "rig": rig}
