# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray-tracing kernels (nearest hit, any hit, sky integral).

Signatures mirror ``_pytrace``; see that module for the reference semantics.
"""

import numpy as np
from cython.parallel cimport prange
from libc.math cimport sqrt, exp, acos, INFINITY

cdef enum:
    STACK_SIZE = 128

ctypedef long long i64


cdef struct Scene:
    const double* bmin
    const double* bmax
    const i64* left
    const i64* right
    const i64* start
    const i64* count
    const double* v0
    const double* e1
    const double* e2
    const i64* tri_index


cdef Scene _scene(double[:, ::1] bmin, double[:, ::1] bmax, i64[::1] left, i64[::1] right,
                  i64[::1] start, i64[::1] count, double[:, ::1] v0, double[:, ::1] e1,
                  double[:, ::1] e2, i64[::1] tri_index):
    cdef Scene s
    s.bmin = &bmin[0, 0]
    s.bmax = &bmax[0, 0]
    s.left = &left[0]
    s.right = &right[0]
    s.start = &start[0]
    s.count = &count[0]
    s.v0 = &v0[0, 0]
    s.e1 = &e1[0, 0]
    s.e2 = &e2[0, 0]
    s.tri_index = &tri_index[0]
    return s


def _as_scene_args(bvh):
    return (np.ascontiguousarray(bvh.bmin, dtype=np.float64),
            np.ascontiguousarray(bvh.bmax, dtype=np.float64),
            np.ascontiguousarray(bvh.left, dtype=np.int64),
            np.ascontiguousarray(bvh.right, dtype=np.int64),
            np.ascontiguousarray(bvh.start, dtype=np.int64),
            np.ascontiguousarray(bvh.count, dtype=np.int64),
            np.ascontiguousarray(bvh.v0, dtype=np.float64),
            np.ascontiguousarray(bvh.e1, dtype=np.float64),
            np.ascontiguousarray(bvh.e2, dtype=np.float64),
            np.ascontiguousarray(bvh.tri_index, dtype=np.int64))


cdef inline double _lo(double a, double b) noexcept nogil:
    # fmin semantics (NaN ignored) without a libm call
    if a < b or b != b:
        return a
    return b


cdef inline double _hi(double a, double b) noexcept nogil:
    if a > b or b != b:
        return a
    return b


cdef inline double _box_entry(const Scene* s, i64 node, double ox, double oy, double oz,
                              double ix, double iy, double iz, double tmax) noexcept nogil:
    """Entry distance into the node box, or -1 on a miss."""
    cdef const double* lo = s.bmin + 3 * node
    cdef const double* hi = s.bmax + 3 * node
    cdef double t1, t2, a, b
    cdef double tnear = 0.0
    cdef double tfar = tmax
    t1 = (lo[0] - ox) * ix
    t2 = (hi[0] - ox) * ix
    a = _lo(t1, t2)
    b = _hi(t1, t2)
    if a > tnear:
        tnear = a
    if b < tfar:
        tfar = b
    t1 = (lo[1] - oy) * iy
    t2 = (hi[1] - oy) * iy
    a = _lo(t1, t2)
    b = _hi(t1, t2)
    if a > tnear:
        tnear = a
    if b < tfar:
        tfar = b
    t1 = (lo[2] - oz) * iz
    t2 = (hi[2] - oz) * iz
    a = _lo(t1, t2)
    b = _hi(t1, t2)
    if a > tnear:
        tnear = a
    if b < tfar:
        tfar = b
    if tnear <= tfar:
        return tnear
    return -1.0


cdef inline bint _leaving_root(const Scene* s, double ox, double oy, double oz,
                               double dx, double dy, double dz) noexcept nogil:
    """True when the ray starts outside the scene box and points away from it."""
    return ((ox < s.bmin[0] and dx <= 0.0) or (ox > s.bmax[0] and dx >= 0.0)
            or (oy < s.bmin[1] and dy <= 0.0) or (oy > s.bmax[1] and dy >= 0.0)
            or (oz < s.bmin[2] and dz <= 0.0) or (oz > s.bmax[2] and dz >= 0.0))


cdef inline double _tri_hit(const Scene* s, i64 slot, double ox, double oy, double oz,
                            double dx, double dy, double dz) noexcept nogil:
    """Moller-Trumbore; returns t > 0 on a hit, otherwise -1."""
    cdef const double* a = s.v0 + 3 * slot
    cdef const double* p = s.e1 + 3 * slot
    cdef const double* q = s.e2 + 3 * slot
    cdef double px = dy * q[2] - dz * q[1]
    cdef double py = dz * q[0] - dx * q[2]
    cdef double pz = dx * q[1] - dy * q[0]
    cdef double det = p[0] * px + p[1] * py + p[2] * pz
    if det == 0.0:
        return -1.0
    cdef double inv = 1.0 / det
    cdef double tx = ox - a[0]
    cdef double ty = oy - a[1]
    cdef double tz = oz - a[2]
    cdef double u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return -1.0
    cdef double qx = ty * p[2] - tz * p[1]
    cdef double qy = tz * p[0] - tx * p[2]
    cdef double qz = tx * p[1] - ty * p[0]
    cdef double v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return -1.0
    cdef double t = (q[0] * qx + q[1] * qy + q[2] * qz) * inv
    if t > 0.0:
        return t
    return -1.0


cdef inline double _safe_inv(double d) noexcept nogil:
    if d == 0.0:
        return INFINITY
    return 1.0 / d


cdef i64 _nearest(const Scene* s, double ox, double oy, double oz, double dx, double dy, double dz,
                  double tmax, double* t_out) noexcept nogil:
    cdef i64 stack[STACK_SIZE]
    cdef int sp = 0
    cdef double ix = _safe_inv(dx)
    cdef double iy = _safe_inv(dy)
    cdef double iz = _safe_inv(dz)
    cdef double best = tmax
    cdef i64 best_id = -1
    cdef i64 best_slot = -1
    cdef i64 node, k, tid, lo, hi
    cdef double t, tl, th
    if _box_entry(s, 0, ox, oy, oz, ix, iy, iz, best) < 0.0:
        t_out[0] = INFINITY
        return -1
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_entry(s, node, ox, oy, oz, ix, iy, iz, best) < 0.0:
            continue
        if s.count[node] > 0:
            for k in range(s.start[node], s.start[node] + s.count[node]):
                t = _tri_hit(s, k, ox, oy, oz, dx, dy, dz)
                if t > 0.0:
                    tid = s.tri_index[k]
                    if t < best or (t == best and tid < best_id):
                        best = t
                        best_id = tid
                        best_slot = k
        else:
            lo = s.left[node]
            hi = s.right[node]
            tl = _box_entry(s, lo, ox, oy, oz, ix, iy, iz, best)
            th = _box_entry(s, hi, ox, oy, oz, ix, iy, iz, best)
            # push the farther child first so the nearer one is popped next
            if tl >= 0.0 and th >= 0.0:
                if tl <= th:
                    stack[sp] = hi
                    stack[sp + 1] = lo
                else:
                    stack[sp] = lo
                    stack[sp + 1] = hi
                sp += 2
            elif tl >= 0.0:
                stack[sp] = lo
                sp += 1
            elif th >= 0.0:
                stack[sp] = hi
                sp += 1
    if best_slot < 0:
        t_out[0] = INFINITY
    else:
        t_out[0] = best
    return best_slot


cdef bint _occluded(const Scene* s, double ox, double oy, double oz, double dx, double dy, double dz,
                    double tmax) noexcept nogil:
    cdef i64 stack[STACK_SIZE]
    cdef int sp = 0
    if _leaving_root(s, ox, oy, oz, dx, dy, dz):
        return False
    cdef double ix = _safe_inv(dx)
    cdef double iy = _safe_inv(dy)
    cdef double iz = _safe_inv(dz)
    cdef i64 node, k
    cdef double t
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_entry(s, node, ox, oy, oz, ix, iy, iz, tmax) < 0.0:
            continue
        if s.count[node] > 0:
            for k in range(s.start[node], s.start[node] + s.count[node]):
                t = _tri_hit(s, k, ox, oy, oz, dx, dy, dz)
                if t > 0.0 and t < tmax:
                    return True
        else:
            stack[sp] = s.right[node]
            stack[sp + 1] = s.left[node]
            sp += 2
    return False


def trace_nearest(bvh, origins, directions, double tmax=INFINITY, int n_threads=1):
    """Nearest hit per ray: returns (t, slot) with t = inf and slot = -1 on a miss."""
    args = _as_scene_args(bvh)
    cdef Scene s = _scene(args[0], args[1], args[2], args[3], args[4], args[5], args[6], args[7],
                          args[8], args[9])
    cdef double[:, ::1] o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] d = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = o.shape[0]
    t_arr = np.empty(n, dtype=np.float64)
    slot_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] t = t_arr
    cdef i64[::1] slot = slot_arr
    cdef Py_ssize_t i
    for i in prange(n, nogil=True, schedule="static", num_threads=max(1, n_threads)):
        slot[i] = _nearest(&s, o[i, 0], o[i, 1], o[i, 2], d[i, 0], d[i, 1], d[i, 2], tmax, &t[i])
    return t_arr, slot_arr


def trace_occluded(bvh, origins, directions, double tmax=INFINITY, int n_threads=1):
    """Any-hit test per ray within (0, tmax)."""
    args = _as_scene_args(bvh)
    cdef Scene s = _scene(args[0], args[1], args[2], args[3], args[4], args[5], args[6], args[7],
                          args[8], args[9])
    cdef double[:, ::1] o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] d = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = o.shape[0]
    out_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    cdef Py_ssize_t i
    for i in prange(n, nogil=True, schedule="static", num_threads=max(1, n_threads)):
        out[i] = _occluded(&s, o[i, 0], o[i, 1], o[i, 2], d[i, 0], d[i, 1], d[i, 2], tmax)
    return out_arr.astype(bool)


cdef double _sky_pixel(const Scene* s, const double* o, const double* nrm, const double* tan,
                       const double* bit, double shift, double cb, double sb,
                       const double* u_tab, const double* cphi, const double* sphi, Py_ssize_t n_samples,
                       const double* sun, double inv2s2) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t k
    cdef double u, r, z, c, sn, lx, ly, dx, dy, dz, g, cosang, ang
    for k in range(n_samples):
        u = u_tab[k] + shift
        if u >= 1.0:
            u = u - 1.0
        r = sqrt(u)
        z = sqrt(1.0 - u)
        c = cphi[k] * cb - sphi[k] * sb
        sn = sphi[k] * cb + cphi[k] * sb
        lx = r * c
        ly = r * sn
        dx = lx * tan[0] + ly * bit[0] + z * nrm[0]
        dy = lx * tan[1] + ly * bit[1] + z * nrm[1]
        dz = lx * tan[2] + ly * bit[2] + z * nrm[2]
        if dz <= 0.0:
            continue
        if inv2s2 > 0.0:
            cosang = dx * sun[0] + dy * sun[1] + dz * sun[2]
            if cosang > 1.0:
                cosang = 1.0
            elif cosang < -1.0:
                cosang = -1.0
            ang = acos(cosang)
            g = exp(-ang * ang * inv2s2)
            if g == 0.0:
                continue
        else:
            g = 1.0
        if not _occluded(s, o[0], o[1], o[2], dx, dy, dz, INFINITY):
            acc += g
    return acc


def sky_integral(bvh, origins, normals, tangents, bitangents, shift, cos_beta, sin_beta,
                 u_tab, cos_phi, sin_phi, sun, double inv2s2, int n_threads=1):
    """Sum over samples of V_sky * G for each pixel (caller scales by pi / N)."""
    args = _as_scene_args(bvh)
    cdef Scene s = _scene(args[0], args[1], args[2], args[3], args[4], args[5], args[6], args[7],
                          args[8], args[9])
    cdef double[:, ::1] o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] nrm = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] tan = np.ascontiguousarray(tangents, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] bit = np.ascontiguousarray(bitangents, dtype=np.float64).reshape(-1, 3)
    cdef double[::1] sh = np.ascontiguousarray(shift, dtype=np.float64)
    cdef double[::1] cb = np.ascontiguousarray(cos_beta, dtype=np.float64)
    cdef double[::1] sb = np.ascontiguousarray(sin_beta, dtype=np.float64)
    cdef double[::1] ut = np.ascontiguousarray(u_tab, dtype=np.float64)
    cdef double[::1] cp = np.ascontiguousarray(cos_phi, dtype=np.float64)
    cdef double[::1] sp = np.ascontiguousarray(sin_phi, dtype=np.float64)
    cdef double[::1] sv = np.ascontiguousarray(sun, dtype=np.float64)
    cdef Py_ssize_t n = o.shape[0]
    cdef Py_ssize_t m = ut.shape[0]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    if n == 0:
        return out_arr
    for i in prange(n, nogil=True, schedule="static", num_threads=max(1, n_threads)):
        out[i] = _sky_pixel(&s, &o[i, 0], &nrm[i, 0], &tan[i, 0], &bit[i, 0], sh[i], cb[i], sb[i],
                            &ut[0], &cp[0], &sp[0], m, &sv[0], inv2s2)
    return out_arr
