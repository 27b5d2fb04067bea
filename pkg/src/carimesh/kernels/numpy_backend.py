"""Pure-NumPy fallback for the BVH query kernels.

Traversal runs per query in Python with vectorized leaf tests.  Correct on
any mesh but much slower than the compiled backend on large ones; the
acceptance pipeline and the benchmark exercise both.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"

_DEGEN_EPS = 1e-9


def closest_point_triangles(p, tri):
    """Closest points on a batch of triangles to a single query point.

    p: (3,), tri: (k, 3, 3).  Returns (points (k, 3), squared distances (k,)).
    Branchless vectorization of the standard region-based point-triangle test.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom

    t_ab = np.nan_to_num(t_ab)[:, None]
    t_ac = np.nan_to_num(t_ac)[:, None]
    t_bc = np.nan_to_num(t_bc)[:, None]
    v_in = np.nan_to_num(v_in)[:, None]
    w_in = np.nan_to_num(w_in)[:, None]

    out = a + ab * v_in + ac * w_in  # interior default
    cond_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    out = np.where(cond_bc[:, None], b + (c - b) * t_bc, out)
    cond_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    out = np.where(cond_ac[:, None], a + ac * t_ac, out)
    cond_c = (d6 >= 0) & (d5 <= d6)
    out = np.where(cond_c[:, None], c, out)
    cond_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out = np.where(cond_ab[:, None], a + ab * t_ab, out)
    cond_b = (d3 >= 0) & (d4 <= d3)
    out = np.where(cond_b[:, None], b, out)
    cond_a = (d1 <= 0) & (d2 <= 0)
    out = np.where(cond_a[:, None], a, out)

    diff = out - p
    return out, np.einsum("ij,ij->i", diff, diff)


def ray_triangles(origin, direction, tri):
    """Moller-Trumbore against a batch of triangles.

    Returns (t, hit_mask, degenerate_mask); t is +inf where there is no hit.
    A hit is degenerate when it grazes a triangle edge/vertex or the ray is
    near-parallel to the triangle plane.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    e1 = b - a
    e2 = c - a
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1) + 1e-300
    near_parallel = np.abs(det) < 1e-12 * scale
    inv = np.where(near_parallel, 0.0, 1.0 / np.where(det == 0, 1.0, det))
    tvec = origin - a
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e1)
    v = np.einsum("ij,j->i", qvec, direction) * inv
    t = np.einsum("ij,ij->i", qvec, e2) * inv
    w = 1.0 - u - v
    inside = (u >= 0.0) & (v >= 0.0) & (w >= 0.0)
    hit = inside & ~near_parallel & (t > 0.0)
    t = np.where(hit, t, np.inf)
    bary_min = np.minimum(np.minimum(u, v), w)
    # near-parallel triangles are conservatively degenerate: the caller
    # re-casts with a jittered direction rather than trusting the parity
    degen = (inside & (bary_min < _DEGEN_EPS)) | near_parallel
    return t, hit, degen


def _ray_box(origin, inv_dir, bmin, bmax):
    """Slab test; returns (tnear, tfar) per node (intervals may be empty)."""
    t0 = (bmin - origin) * inv_dir
    t1 = (bmax - origin) * inv_dir
    tnear = np.minimum(t0, t1).max(axis=-1)
    tfar = np.maximum(t0, t1).min(axis=-1)
    return tnear, tfar


def _box_dist2(p, bmin, bmax):
    d = np.maximum(np.maximum(bmin - p, 0.0), p - bmax)
    return np.einsum("...i,...i->...", d, d)


def closest_point(queries, verts, tris, bvh):
    n = len(queries)
    out_pt = np.empty((n, 3))
    out_face = np.empty(n, dtype=np.int64)
    out_d2 = np.empty(n)
    tv = verts[tris]
    for qi in range(n):
        p = queries[qi]
        best_d2 = np.inf
        best_face = -1
        best_pt = np.zeros(3)
        stack = [0]
        while stack:
            node = stack.pop()
            if _box_dist2(p, bvh.bmin[node], bvh.bmax[node]) >= best_d2:
                continue
            cnt = bvh.count[node]
            if cnt > 0:
                ids = bvh.order[bvh.start[node]: bvh.start[node] + cnt]
                pts, d2 = closest_point_triangles(p, tv[ids])
                for j in np.argsort(d2, kind="stable"):
                    fid = ids[j]
                    if d2[j] < best_d2 or (d2[j] == best_d2 and fid < best_face):
                        best_d2 = d2[j]
                        best_face = fid
                        best_pt = pts[j]
            else:
                l, r = bvh.left[node], bvh.right[node]
                dl = _box_dist2(p, bvh.bmin[l], bvh.bmax[l])
                dr = _box_dist2(p, bvh.bmin[r], bvh.bmax[r])
                # push farther child first so nearer is processed next
                if dl <= dr:
                    stack.append(r)
                    stack.append(l)
                else:
                    stack.append(l)
                    stack.append(r)
        out_pt[qi] = best_pt
        out_face[qi] = best_face
        out_d2[qi] = best_d2
    return out_pt, out_face, np.sqrt(out_d2)


def ray_first_hit(origins, dirs, verts, tris, bvh):
    n = len(origins)
    out_t = np.full(n, np.inf)
    out_face = np.full(n, -1, dtype=np.int64)
    out_degen = np.zeros(n, dtype=bool)
    tv = verts[tris]
    for qi in range(n):
        o = origins[qi]
        d = dirs[qi]
        with np.errstate(divide="ignore"):
            inv = 1.0 / d
        best_t = np.inf
        best_face = -1
        degen = False
        stack = [0]
        while stack:
            node = stack.pop()
            tnear, tfar = _ray_box(o, inv, bvh.bmin[node], bvh.bmax[node])
            if tfar < max(tnear, 0.0) or tnear > best_t:
                continue
            cnt = bvh.count[node]
            if cnt > 0:
                ids = bvh.order[bvh.start[node]: bvh.start[node] + cnt]
                t, hit, dg = ray_triangles(o, d, tv[ids])
                if dg.any():
                    degen = True
                for j in np.where(hit)[0]:
                    fid = ids[j]
                    if t[j] < best_t or (t[j] == best_t and fid < best_face):
                        best_t = t[j]
                        best_face = fid
            else:
                stack.append(bvh.right[node])
                stack.append(bvh.left[node])
        out_t[qi] = best_t
        out_face[qi] = best_face
        out_degen[qi] = degen
    return out_t, out_face, out_degen


def ray_crossings(origins, dirs, verts, tris, bvh):
    n = len(origins)
    out_count = np.zeros(n, dtype=np.int64)
    out_degen = np.zeros(n, dtype=bool)
    tv = verts[tris]
    for qi in range(n):
        o = origins[qi]
        d = dirs[qi]
        with np.errstate(divide="ignore"):
            inv = 1.0 / d
        count = 0
        degen = False
        stack = [0]
        while stack:
            node = stack.pop()
            tnear, tfar = _ray_box(o, inv, bvh.bmin[node], bvh.bmax[node])
            if tfar < max(tnear, 0.0):
                continue
            cnt = bvh.count[node]
            if cnt > 0:
                ids = bvh.order[bvh.start[node]: bvh.start[node] + cnt]
                t, hit, dg = ray_triangles(o, d, tv[ids])
                count += int(hit.sum())
                if dg.any():
                    degen = True
            else:
                stack.append(bvh.right[node])
                stack.append(bvh.left[node])
        out_count[qi] = count
        out_degen[qi] = degen
    return out_count, out_degen
