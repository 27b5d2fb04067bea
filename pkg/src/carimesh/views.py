"""Orthographic three-view rig, 44-landmark scheme and landmark lifting.

View space hosts the camera at large +z looking along -z; depth decreases
toward the camera, so the front-most surface point along a pixel ray is the
first ray hit.  The front view is the identity rotation, left/right are
+/- 90 degree yaws about the vertical (y) axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import MeshError
from .spatial import Ray, closest_point_on_surface, ray_intersect

VIEW_IDS = ("front", "left", "right")


@dataclass(frozen=True)
class ViewCamera:
    view_id: str
    rotation: np.ndarray  # world -> view, 3x3, det +1
    translation: np.ndarray  # view-space offset
    scale: float  # pixels per model unit
    image_size: tuple  # (width, height)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("camera rotation must be a proper rotation")
        if self.scale <= 0:
            raise ValueError("camera scale must be positive")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def view_coords(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return p @ self.rotation.T + self.translation

    def project(self, points):
        """(u, v, depth) per point; depth = -view z (smaller is nearer)."""
        pv = self.view_coords(points)
        w, h = self.image_size
        u = w / 2.0 + self.scale * pv[:, 0]
        v = h / 2.0 + self.scale * pv[:, 1]
        out = np.stack([u, v, -pv[:, 2]], axis=1)
        return out[0] if np.asarray(points).ndim == 1 else out

    def pixel_ray(self, uv, z_start):
        """World-space ray through pixel (u, v), starting at view z = z_start."""
        w, h = self.image_size
        x = (uv[0] - w / 2.0) / self.scale
        y = (uv[1] - h / 2.0) / self.scale
        origin_view = np.array([x, y, z_start])
        origin = (origin_view - self.translation) @ self.rotation
        direction = -self.rotation[2]  # view -z axis in world coordinates
        return Ray(origin, direction)


@dataclass(frozen=True)
class LandmarkScheme:
    """Canonical landmark ordering, per-view visibility and graph edges."""

    names: tuple
    view_subsets: dict  # view id -> tuple of canonical indices (ascending)
    edges: tuple = ()  # canonical-index pairs, undirected, no self loops

    def __post_init__(self):
        n = len(self.names)
        covered = set()
        for view, subset in self.view_subsets.items():
            if len(set(subset)) != len(subset):
                raise ValueError(f"duplicate landmark in view {view!r}")
            if any(i < 0 or i >= n for i in subset):
                raise ValueError(f"landmark index out of range in view {view!r}")
            covered.update(subset)
        if covered != set(range(n)):
            missing = sorted(set(range(n)) - covered)
            raise ValueError(f"landmarks visible in no view: {missing}")

    @property
    def n_landmarks(self):
        return len(self.names)

    def subset(self, view):
        return np.asarray(self.view_subsets[view], dtype=np.int64)

    def views_of(self, index):
        return [v for v, s in self.view_subsets.items() if index in s]

    def adjacency(self, view=None):
        """Symmetric 0/1 adjacency with self-loops.

        With a view id, returns the induced local graph over that view's
        subset (in subset order); otherwise the 44-node global graph.
        """
        if view is None:
            ids = np.arange(self.n_landmarks)
        else:
            ids = self.subset(view)
        pos = {int(c): k for k, c in enumerate(ids)}
        n = len(ids)
        A = np.eye(n)
        for a, b in self.edges:
            if a in pos and b in pos:
                A[pos[a], pos[b]] = 1.0
                A[pos[b], pos[a]] = 1.0
        return A


def _chain(ids, closed=False):
    e = [(ids[i], ids[i + 1]) for i in range(len(ids) - 1)]
    if closed:
        e.append((ids[-1], ids[0]))
    return e


def default_scheme():
    """The 44-landmark scheme shipped with the library.

    Jaw contour (0-8), brows (9-16), eyes (17-24), nose (25-29, index 25 is
    the top-of-nose root), mouth ring (30-37) and ears (38-43).  Face
    interior landmarks live in the front view; ears and jaw-profile ends in
    the side views, with the jaw corners shared.
    """
    names = (
        [f"jaw_{i}" for i in range(9)]
        + ["brow_r_0", "brow_r_1", "brow_r_2", "brow_r_3"]
        + ["brow_l_0", "brow_l_1", "brow_l_2", "brow_l_3"]
        + ["eye_r_outer", "eye_r_top", "eye_r_inner", "eye_r_bottom"]
        + ["eye_l_inner", "eye_l_top", "eye_l_outer", "eye_l_bottom"]
        + ["nose_top", "nose_bridge", "nose_tip", "nostril_r", "nostril_l"]
        + [f"mouth_{i}" for i in range(8)]
        + ["ear_r_top", "ear_r_mid", "ear_r_lobe"]
        + ["ear_l_top", "ear_l_mid", "ear_l_lobe"]
    )
    front = tuple(range(2, 7)) + tuple(range(9, 38))
    right = (0, 1, 2, 38, 39, 40)
    left = (6, 7, 8, 41, 42, 43)
    edges = (
        _chain(list(range(9)))
        + _chain([9, 10, 11, 12])
        + _chain([13, 14, 15, 16])
        + _chain([17, 18, 19, 20], closed=True)
        + _chain([21, 22, 23, 24], closed=True)
        + _chain([25, 26, 27])
        + [(27, 28), (27, 29), (25, 12), (25, 13), (25, 19), (25, 22)]
        + _chain(list(range(30, 38)), closed=True)
        + _chain([38, 39, 40])
        + _chain([41, 42, 43])
        + [(0, 39), (8, 42), (29, 31), (28, 35)]
    )
    return LandmarkScheme(
        names=tuple(names),
        view_subsets={"front": front, "left": left, "right": right},
        edges=tuple(edges),
    )


def default_rig(mesh, image_size=(512, 512), fill=0.9):
    """Front/left/right orthographic cameras framing the mesh.

    Each view centers the mesh bounding box and scales it to fill ``fill``
    of the smaller image dimension.
    """
    lo, hi = mesh.bounds()
    if np.any(hi - lo <= 0):
        raise MeshError("degenerate bounding box")
    center = (lo + hi) / 2.0
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    rots = {
        "front": np.eye(3),
        # yaw about the vertical axis; "left" shows the +x side of the head
        "left": np.array([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
        "right": np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]]),
    }
    cams = {}
    w, h = image_size
    for view, R in rots.items():
        pv = (corners - center) @ R.T
        extent = max(pv[:, 0].max() - pv[:, 0].min(), pv[:, 1].max() - pv[:, 1].min())
        scale = fill * min(w, h) / extent
        cams[view] = ViewCamera(view, R, -R @ center, scale, (w, h))
    return cams


def _front_facing(mesh, face, direction):
    a, b, c = mesh.vertices[mesh.faces[face]]
    normal = np.cross(b - a, c - a)
    return float(normal @ direction) < 0.0


def lift_landmark(camera, p2d, mesh, index):
    """Lift a 2D landmark to the front-most mesh surface point along its ray.

    Returns (point, fallback) where fallback is True when the pixel ray
    missed the mesh and the closest surface point to the ray was used.
    A ray through an exact vertex or edge can slip between triangles and
    report the far (back-facing) side first; such leaks are retried with a
    sub-pixel jitter before falling back.
    """
    if mesh.n_faces == 0:
        raise MeshError("cannot lift onto an empty mesh")
    lo, hi = mesh.bounds()
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    zmax = camera.view_coords(corners)[:, 2].max()
    margin = 0.1 * (np.linalg.norm(hi - lo) + 1.0)
    uv = np.asarray(p2d, dtype=np.float64)
    jitter = 1e-4  # pixels; well under any landmark tolerance
    ray = None
    for du, dv in ((0.0, 0.0), (jitter, 0.0), (-jitter, 0.0),
                   (0.0, jitter), (0.0, -jitter), (jitter, jitter)):
        ray = camera.pixel_ray(uv + (du, dv), zmax + margin)
        hit = ray_intersect(ray, mesh, index)
        if hit is not None and _front_facing(mesh, hit[1], ray.direction):
            return hit[2], False
    # nearest approach of the ray to the mesh, then closest surface point
    cp, _, _ = closest_point_on_surface(ray.origin, mesh, index)
    t = max(float(np.dot(cp - ray.origin, ray.direction)), 0.0)
    probe = ray.origin + t * ray.direction
    point, _, _ = closest_point_on_surface(probe, mesh, index)
    return point, True


def initialize_landmarks3D(mesh, index, landmarks2d, rig, scheme):
    """Lift per-view 2D landmarks onto the mesh and average shared ones.

    landmarks2d maps view id -> (k_v, 2) array in the view's subset order.
    Returns (L (44, 3), per-view dict of lifted (k_v, 3) arrays, fallback
    mask (44,)).
    """
    n = scheme.n_landmarks
    acc = np.zeros((n, 3))
    cnt = np.zeros(n)
    fallback = np.zeros(n, dtype=bool)
    per_view = {}
    for view in sorted(landmarks2d.keys()):
        p2d = np.asarray(landmarks2d[view], dtype=np.float64)
        subset = scheme.subset(view)
        if len(p2d) != len(subset):
            raise ValueError(
                f"view {view!r}: {len(p2d)} landmarks, scheme expects {len(subset)}"
            )
        lifted = np.empty((len(subset), 3))
        for k, ci in enumerate(subset):
            pt, fb = lift_landmark(rig[view], p2d[k], mesh, index)
            lifted[k] = pt
            fallback[ci] |= fb
        per_view[view] = lifted
        acc[subset] += lifted
        cnt[subset] += 1
    if np.any(cnt == 0):
        missing = np.nonzero(cnt == 0)[0].tolist()
        raise ValueError(f"landmarks visible in no provided view: {missing}")
    return acc / cnt[:, None], per_view, fallback


def project_landmarks(L, rig, scheme, views=None):
    """Per-view 2D projections of canonical 3D landmarks (subset order)."""
    out = {}
    for view in views or sorted(rig.keys()):
        subset = scheme.subset(view)
        out[view] = rig[view].project(L[subset])[:, :2]
    return out


def stub_detect_2d(L_true, rig, scheme, noise_px=0.0, seed=0):
    """Deterministic stand-in for the 2D landmark detector.

    Projects ground-truth 3D landmarks into each view, optionally adding
    seeded Gaussian pixel noise.
    """
    out = project_landmarks(L_true, rig, scheme)
    if noise_px > 0:
        rng = np.random.default_rng(seed)
        for view in sorted(out.keys()):
            out[view] = out[view] + rng.normal(scale=noise_px, size=out[view].shape)
    return out


# ---------------------------------------------------------------------------
# file formats

def save_landmarks3d(L, names, path):
    with open(path, "w") as fh:
        for i, p in enumerate(L):
            fh.write("%d %s 3d %.17g %.17g %.17g\n" % (i, names[i], p[0], p[1], p[2]))


def load_landmarks3d(path, scheme=None):
    records = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6 or parts[2] != "3d":
                raise ValueError(f"{path}:{lineno}: expected 'index name 3d x y z'")
            records[int(parts[0])] = [float(x) for x in parts[3:6]]
    n = scheme.n_landmarks if scheme else (max(records) + 1 if records else 0)
    if sorted(records) != list(range(n)):
        raise ValueError(f"{path}: expected landmarks 0..{n - 1}")
    return np.array([records[i] for i in range(n)])


def save_landmarks2d(per_view, scheme, path):
    with open(path, "w") as fh:
        for view in sorted(per_view.keys()):
            subset = scheme.subset(view)
            for k, ci in enumerate(subset):
                u, v = per_view[view][k]
                fh.write("%d %s 2d %s %.17g %.17g\n" % (ci, scheme.names[ci], view, u, v))


def load_landmarks2d(path, scheme):
    per_view = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6 or parts[2] != "2d":
                raise ValueError(f"{path}:{lineno}: expected 'index name 2d view u v'")
            per_view.setdefault(parts[3], {})[int(parts[0])] = (float(parts[4]), float(parts[5]))
    out = {}
    for view, recs in per_view.items():
        subset = scheme.subset(view)
        if sorted(recs) != sorted(int(i) for i in subset):
            raise ValueError(f"{path}: view {view!r} does not match the scheme subset")
        out[view] = np.array([recs[int(ci)] for ci in subset])
    return out


def save_rig(rig, path):
    with open(path, "w") as fh:
        for view in sorted(rig.keys()):
            c = rig[view]
            fh.write(f"view {view}\n")
            fh.write("rotation " + " ".join("%.17g" % x for x in c.rotation.ravel()) + "\n")
            fh.write("translation " + " ".join("%.17g" % x for x in c.translation) + "\n")
            fh.write("scale %.17g\n" % c.scale)
            fh.write("image_size %d %d\n" % c.image_size)


def load_rig(path):
    rig = {}
    cur = None
    fields = {}

    def flush():
        if cur is not None:
            rig[cur] = ViewCamera(
                cur,
                np.array(fields["rotation"]).reshape(3, 3),
                np.array(fields["translation"]),
                fields["scale"][0],
                (int(fields["image_size"][0]), int(fields["image_size"][1])),
            )

    with open(path) as fh:
        for raw in fh:
            parts = raw.split()
            if not parts:
                continue
            if parts[0] == "view":
                flush()
                cur = parts[1]
                fields = {}
            else:
                fields[parts[0]] = [float(x) for x in parts[1:]]
    flush()
    return rig
