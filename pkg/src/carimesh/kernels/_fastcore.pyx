# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled BVH query kernels: closest point, first ray hit, crossing count.

Mirrors kernels.numpy_backend exactly (same traversal logic and tie rules)
so either backend can be selected at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs, sqrt

cnp.import_array()

NAME = "compiled"

cdef double DEGEN_EPS = 1e-9

cdef struct Vec3:
    double x, y, z

cdef inline Vec3 vsub(Vec3 a, Vec3 b) noexcept nogil:
    cdef Vec3 r
    r.x = a.x - b.x; r.y = a.y - b.y; r.z = a.z - b.z
    return r

cdef inline Vec3 vadd(Vec3 a, Vec3 b) noexcept nogil:
    cdef Vec3 r
    r.x = a.x + b.x; r.y = a.y + b.y; r.z = a.z + b.z
    return r

cdef inline Vec3 vscale(Vec3 a, double s) noexcept nogil:
    cdef Vec3 r
    r.x = a.x * s; r.y = a.y * s; r.z = a.z * s
    return r

cdef inline double vdot(Vec3 a, Vec3 b) noexcept nogil:
    return a.x * b.x + a.y * b.y + a.z * b.z

cdef inline Vec3 vcross(Vec3 a, Vec3 b) noexcept nogil:
    cdef Vec3 r
    r.x = a.y * b.z - a.z * b.y
    r.y = a.z * b.x - a.x * b.z
    r.z = a.x * b.y - a.y * b.x
    return r

cdef inline Vec3 getv(const double[:, ::1] arr, Py_ssize_t i) noexcept nogil:
    cdef Vec3 r
    r.x = arr[i, 0]; r.y = arr[i, 1]; r.z = arr[i, 2]
    return r


cdef inline double closest_on_tri(Vec3 p, Vec3 a, Vec3 b, Vec3 c, Vec3 *out) noexcept nogil:
    """Region-based point-triangle closest point; returns squared distance."""
    cdef Vec3 ab = vsub(b, a)
    cdef Vec3 ac = vsub(c, a)
    cdef Vec3 ap = vsub(p, a)
    cdef double d1 = vdot(ab, ap)
    cdef double d2 = vdot(ac, ap)
    cdef Vec3 q
    cdef Vec3 d
    if d1 <= 0.0 and d2 <= 0.0:
        out[0] = a
        d = vsub(a, p)
        return vdot(d, d)
    cdef Vec3 bp = vsub(p, b)
    cdef double d3 = vdot(ab, bp)
    cdef double d4 = vdot(ac, bp)
    if d3 >= 0.0 and d4 <= d3:
        out[0] = b
        d = vsub(b, p)
        return vdot(d, d)
    cdef double vc = d1 * d4 - d3 * d2
    cdef double v, w
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        q = vadd(a, vscale(ab, v))
        out[0] = q
        d = vsub(q, p)
        return vdot(d, d)
    cdef Vec3 cp = vsub(p, c)
    cdef double d5 = vdot(ab, cp)
    cdef double d6 = vdot(ac, cp)
    if d6 >= 0.0 and d5 <= d6:
        out[0] = c
        d = vsub(c, p)
        return vdot(d, d)
    cdef double vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        q = vadd(a, vscale(ac, w))
        out[0] = q
        d = vsub(q, p)
        return vdot(d, d)
    cdef double va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        q = vadd(b, vscale(vsub(c, b), w))
        out[0] = q
        d = vsub(q, p)
        return vdot(d, d)
    cdef double denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    q = vadd(a, vadd(vscale(ab, v), vscale(ac, w)))
    out[0] = q
    d = vsub(q, p)
    return vdot(d, d)


cdef inline double box_dist2(Vec3 p, const double[:, ::1] bmin,
                             const double[:, ::1] bmax, Py_ssize_t node) noexcept nogil:
    cdef double d, acc = 0.0
    d = bmin[node, 0] - p.x
    if d < 0.0:
        d = p.x - bmax[node, 0]
    if d > 0.0:
        acc += d * d
    d = bmin[node, 1] - p.y
    if d < 0.0:
        d = p.y - bmax[node, 1]
    if d > 0.0:
        acc += d * d
    d = bmin[node, 2] - p.z
    if d < 0.0:
        d = p.z - bmax[node, 2]
    if d > 0.0:
        acc += d * d
    return acc


cdef inline bint ray_box(Vec3 o, Vec3 inv, const double[:, ::1] bmin,
                         const double[:, ::1] bmax, Py_ssize_t node,
                         double tmax, double *tnear_out) noexcept nogil:
    cdef double t0, t1, tmp, tnear = -INFINITY, tfar = INFINITY
    t0 = (bmin[node, 0] - o.x) * inv.x
    t1 = (bmax[node, 0] - o.x) * inv.x
    if t0 > t1:
        tmp = t0; t0 = t1; t1 = tmp
    if t0 > tnear:
        tnear = t0
    if t1 < tfar:
        tfar = t1
    t0 = (bmin[node, 1] - o.y) * inv.y
    t1 = (bmax[node, 1] - o.y) * inv.y
    if t0 > t1:
        tmp = t0; t0 = t1; t1 = tmp
    if t0 > tnear:
        tnear = t0
    if t1 < tfar:
        tfar = t1
    t0 = (bmin[node, 2] - o.z) * inv.z
    t1 = (bmax[node, 2] - o.z) * inv.z
    if t0 > t1:
        tmp = t0; t0 = t1; t1 = tmp
    if t0 > tnear:
        tnear = t0
    if t1 < tfar:
        tfar = t1
    if tfar < (tnear if tnear > 0.0 else 0.0) or tnear > tmax:
        return False
    tnear_out[0] = tnear
    return True


cdef inline int ray_tri(Vec3 o, Vec3 d, Vec3 a, Vec3 b, Vec3 c,
                        double *t_out, bint *degen_out) noexcept nogil:
    """Returns 1 on a hit with t > 0; sets degen flag on grazing geometry."""
    cdef Vec3 e1 = vsub(b, a)
    cdef Vec3 e2 = vsub(c, a)
    cdef Vec3 pvec = vcross(d, e2)
    cdef double det = vdot(e1, pvec)
    cdef double scale = sqrt(vdot(e1, e1)) * sqrt(vdot(e2, e2)) + 1e-300
    cdef Vec3 tvec, qvec
    cdef double inv, u, v, w, t, bary_min
    if fabs(det) < 1e-12 * scale:
        # near-parallel triangles are conservatively degenerate: the caller
        # re-casts with a jittered direction rather than trusting the parity
        degen_out[0] = True
        return 0
    inv = 1.0 / det
    tvec = vsub(o, a)
    u = vdot(tvec, pvec) * inv
    qvec = vcross(tvec, e1)
    v = vdot(qvec, d) * inv
    t = vdot(qvec, e2) * inv
    w = 1.0 - u - v
    if u >= 0.0 and v >= 0.0 and w >= 0.0:
        bary_min = u
        if v < bary_min:
            bary_min = v
        if w < bary_min:
            bary_min = w
        if bary_min < DEGEN_EPS:
            degen_out[0] = True
        if t > 0.0:
            t_out[0] = t
            return 1
    return 0


def closest_point(const double[:, ::1] queries,
                  const double[:, ::1] verts,
                  const int[:, ::1] tris,
                  bvh):
    cdef const double[:, ::1] bmin = bvh.bmin
    cdef const double[:, ::1] bmax = bvh.bmax
    cdef const int[::1] left = bvh.left
    cdef const int[::1] right = bvh.right
    cdef const int[::1] start = bvh.start
    cdef const int[::1] count = bvh.count
    cdef const int[::1] order = bvh.order

    cdef Py_ssize_t n = queries.shape[0]
    out_pt = np.empty((n, 3), dtype=np.float64)
    out_face = np.empty(n, dtype=np.int64)
    out_dist = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] opt = out_pt
    cdef long long[::1] oface = out_face
    cdef double[::1] odist = out_dist

    cdef int[4096] stack
    cdef int sp, node, l, r, fid
    cdef Py_ssize_t qi, j
    cdef Vec3 p, best_pt, cand, a, b, c
    cdef double best_d2, d2, dl, dr
    cdef long long best_face

    with nogil:
        for qi in range(n):
            p = getv(queries, qi)
            best_d2 = INFINITY
            best_face = -1
            best_pt.x = 0.0; best_pt.y = 0.0; best_pt.z = 0.0
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                if box_dist2(p, bmin, bmax, node) >= best_d2:
                    continue
                if count[node] > 0:
                    for j in range(start[node], start[node] + count[node]):
                        fid = order[j]
                        a = getv(verts, tris[fid, 0])
                        b = getv(verts, tris[fid, 1])
                        c = getv(verts, tris[fid, 2])
                        d2 = closest_on_tri(p, a, b, c, &cand)
                        if d2 < best_d2 or (d2 == best_d2 and fid < best_face):
                            best_d2 = d2
                            best_face = fid
                            best_pt = cand
                else:
                    l = left[node]
                    r = right[node]
                    dl = box_dist2(p, bmin, bmax, l)
                    dr = box_dist2(p, bmin, bmax, r)
                    if dl <= dr:
                        stack[sp] = r; sp += 1
                        stack[sp] = l; sp += 1
                    else:
                        stack[sp] = l; sp += 1
                        stack[sp] = r; sp += 1
            opt[qi, 0] = best_pt.x
            opt[qi, 1] = best_pt.y
            opt[qi, 2] = best_pt.z
            oface[qi] = best_face
            odist[qi] = sqrt(best_d2)
    return out_pt, out_face, out_dist


def ray_first_hit(const double[:, ::1] origins,
                  const double[:, ::1] dirs,
                  const double[:, ::1] verts,
                  const int[:, ::1] tris,
                  bvh):
    cdef const double[:, ::1] bmin = bvh.bmin
    cdef const double[:, ::1] bmax = bvh.bmax
    cdef const int[::1] left = bvh.left
    cdef const int[::1] right = bvh.right
    cdef const int[::1] start = bvh.start
    cdef const int[::1] count = bvh.count
    cdef const int[::1] order = bvh.order

    cdef Py_ssize_t n = origins.shape[0]
    out_t = np.full(n, np.inf, dtype=np.float64)
    out_face = np.full(n, -1, dtype=np.int64)
    out_degen = np.zeros(n, dtype=np.uint8)
    cdef double[::1] ot = out_t
    cdef long long[::1] oface = out_face
    cdef unsigned char[::1] odg = out_degen

    cdef int[4096] stack
    cdef int sp, node, fid
    cdef Py_ssize_t qi, j
    cdef Vec3 o, d, inv, a, b, c
    cdef double best_t, t, tnear
    cdef long long best_face
    cdef bint degen, hit

    with nogil:
        for qi in range(n):
            o = getv(origins, qi)
            d = getv(dirs, qi)
            inv.x = 1.0 / d.x if d.x != 0.0 else INFINITY
            inv.y = 1.0 / d.y if d.y != 0.0 else INFINITY
            inv.z = 1.0 / d.z if d.z != 0.0 else INFINITY
            best_t = INFINITY
            best_face = -1
            degen = False
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                if not ray_box(o, inv, bmin, bmax, node, best_t, &tnear):
                    continue
                if count[node] > 0:
                    for j in range(start[node], start[node] + count[node]):
                        fid = order[j]
                        a = getv(verts, tris[fid, 0])
                        b = getv(verts, tris[fid, 1])
                        c = getv(verts, tris[fid, 2])
                        hit = ray_tri(o, d, a, b, c, &t, &degen)
                        if hit and (t < best_t or (t == best_t and fid < best_face)):
                            best_t = t
                            best_face = fid
                else:
                    stack[sp] = right[node]; sp += 1
                    stack[sp] = left[node]; sp += 1
            ot[qi] = best_t
            oface[qi] = best_face
            odg[qi] = 1 if degen else 0
    return out_t, out_face, out_degen.astype(bool)


def ray_crossings(const double[:, ::1] origins,
                  const double[:, ::1] dirs,
                  const double[:, ::1] verts,
                  const int[:, ::1] tris,
                  bvh):
    cdef const double[:, ::1] bmin = bvh.bmin
    cdef const double[:, ::1] bmax = bvh.bmax
    cdef const int[::1] left = bvh.left
    cdef const int[::1] right = bvh.right
    cdef const int[::1] start = bvh.start
    cdef const int[::1] count = bvh.count
    cdef const int[::1] order = bvh.order

    cdef Py_ssize_t n = origins.shape[0]
    out_count = np.zeros(n, dtype=np.int64)
    out_degen = np.zeros(n, dtype=np.uint8)
    cdef long long[::1] ocnt = out_count
    cdef unsigned char[::1] odg = out_degen

    cdef int[4096] stack
    cdef int sp, node, fid
    cdef Py_ssize_t qi, j
    cdef Vec3 o, d, inv, a, b, c
    cdef double t, tnear
    cdef long long cnt
    cdef bint degen

    with nogil:
        for qi in range(n):
            o = getv(origins, qi)
            d = getv(dirs, qi)
            inv.x = 1.0 / d.x if d.x != 0.0 else INFINITY
            inv.y = 1.0 / d.y if d.y != 0.0 else INFINITY
            inv.z = 1.0 / d.z if d.z != 0.0 else INFINITY
            cnt = 0
            degen = False
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                if not ray_box(o, inv, bmin, bmax, node, INFINITY, &tnear):
                    continue
                if count[node] > 0:
                    for j in range(start[node], start[node] + count[node]):
                        fid = order[j]
                        a = getv(verts, tris[fid, 0])
                        b = getv(verts, tris[fid, 1])
                        c = getv(verts, tris[fid, 2])
                        if ray_tri(o, d, a, b, c, &t, &degen):
                            cnt += 1
                else:
                    stack[sp] = right[node]; sp += 1
                    stack[sp] = left[node]; sp += 1
            ocnt[qi] = cnt
            odg[qi] = 1 if degen else 0
    return out_count, out_degen.astype(bool)
