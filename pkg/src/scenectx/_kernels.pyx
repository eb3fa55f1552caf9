# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: equirect bilinear sampling and closest-hit ray casting.

Arithmetic mirrors ``_kernels_py`` operation for operation so both backends
return the same bits; do not reorder expressions in one without the other.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor

cnp.import_array()

DEF EPS = 1e-6

cdef enum:
    MISS = 0
    PLANE = 1
    SPHERE = 2
    BOX = 3
    CAPSULE = 4


def bilinear_wrap(const double[:, :, ::1] img, const double[::1] u, const double[::1] v):
    """Sample ``img`` at fractional pixel coords; wrap along x, clamp along y."""
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1], C = img.shape[2]
    cdef Py_ssize_t n = u.shape[0], i, c
    cdef Py_ssize_t x0, x1, y0, y1
    cdef double fx, fy, fx0, fy0, top, bot, p00, p01, p10, p11
    out = np.empty((n, C), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            fx0 = floor(u[i])
            fy0 = floor(v[i])
            fx = u[i] - fx0
            fy = v[i] - fy0
            x0 = <Py_ssize_t>fx0 % W
            if x0 < 0:
                x0 = x0 + W
            x1 = x0 + 1
            if x1 == W:
                x1 = 0
            y0 = <Py_ssize_t>fy0
            y1 = y0 + 1
            if y0 < 0:
                y0 = 0
            elif y0 > H - 1:
                y0 = H - 1
            if y1 < 0:
                y1 = 0
            elif y1 > H - 1:
                y1 = H - 1
            for c in range(C):
                p00 = img[y0, x0, c]
                p01 = img[y0, x1, c]
                p10 = img[y1, x0, c]
                p11 = img[y1, x1, c]
                top = p00 + fx * (p01 - p00)
                bot = p10 + fx * (p11 - p10)
                o[i, c] = top + fy * (bot - top)
    return out


cdef inline double _sphere(double ox, double oy, double oz, double dx, double dy, double dz,
                           double cx, double cy, double cz, double r) noexcept nogil:
    cdef double px = ox - cx, py = oy - cy, pz = oz - cz
    cdef double b = px * dx + py * dy + pz * dz
    cdef double c = (px * px + py * py + pz * pz) - r * r
    cdef double h = b * b - c
    cdef double s, t
    if h < 0.0:
        return -1.0
    s = sqrt(h)
    t = -b - s
    if t > EPS:
        return t
    t = -b + s
    if t > EPS:
        return t
    return -1.0


cdef inline double _box(double ox, double oy, double oz, double dx, double dy, double dz,
                        const double[:, ::1] bx, Py_ssize_t j) noexcept nogil:
    cdef double tn = -1e300, tf = 1e300, t1, t2, tmp, o, d, lo, hi
    cdef int a
    for a in range(3):
        if a == 0:
            o = ox
            d = dx
        elif a == 1:
            o = oy
            d = dy
        else:
            o = oz
            d = dz
        lo = bx[j, a]
        hi = bx[j, a + 3]
        if d == 0.0:
            if o < lo or o > hi:
                return -1.0
            continue
        t1 = (lo - o) / d
        t2 = (hi - o) / d
        if t1 > t2:
            tmp = t1
            t1 = t2
            t2 = tmp
        if t1 > tn:
            tn = t1
        if t2 < tf:
            tf = t2
    if tn > tf or tf <= EPS:
        return -1.0
    if tn > EPS:
        return tn
    return tf


cdef inline double _capsule(double ox, double oy, double oz, double dx, double dy, double dz,
                            const double[:, ::1] cp, Py_ssize_t j) noexcept nogil:
    cdef double ax = cp[j, 0], ay = cp[j, 1], az = cp[j, 2]
    cdef double bx = cp[j, 3], by = cp[j, 4], bz = cp[j, 5], r = cp[j, 6]
    cdef double best = -1.0, t, y
    cdef double bax = bx - ax, bay = by - ay, baz = bz - az
    cdef double oax = ox - ax, oay = oy - ay, oaz = oz - az
    cdef double baba = bax * bax + bay * bay + baz * baz
    cdef double bard = bax * dx + bay * dy + baz * dz
    cdef double baoa = bax * oax + bay * oay + baz * oaz
    cdef double rdoa = dx * oax + dy * oay + dz * oaz
    cdef double oaoa = oax * oax + oay * oay + oaz * oaz
    cdef double qa = baba - bard * bard
    cdef double qb = baba * rdoa - baoa * bard
    cdef double qc = baba * oaoa - baoa * baoa - r * r * baba
    cdef double h
    if qa > 1e-12:
        h = qb * qb - qa * qc
        if h >= 0.0:
            t = (-qb - sqrt(h)) / qa
            y = baoa + t * bard
            if t > EPS and y > 0.0 and y < baba:
                best = t
    t = _sphere(ox, oy, oz, dx, dy, dz, ax, ay, az, r)
    if t > 0.0 and (best < 0.0 or t < best):
        best = t
    t = _sphere(ox, oy, oz, dx, dy, dz, bx, by, bz, r)
    if t > 0.0 and (best < 0.0 or t < best):
        best = t
    return best


def closest_hit(const double[:, ::1] origins, const double[:, ::1] dirs,
                const double[:, ::1] spheres, const double[:, ::1] boxes,
                const double[:, ::1] capsules, bint ground):
    """Nearest intersection per ray.

    Returns ``(t, kind, index)``; ``kind`` is 0 for a miss, 1 ground plane,
    2 sphere, 3 box, 4 capsule. Directions must be unit length.
    """
    cdef Py_ssize_t n = origins.shape[0], i, j
    cdef Py_ssize_t ns = spheres.shape[0], nb = boxes.shape[0], nc = capsules.shape[0]
    t_out = np.full(n, np.inf, dtype=np.float64)
    k_out = np.zeros(n, dtype=np.int8)
    i_out = np.full(n, -1, dtype=np.int32)
    cdef double[::1] tv = t_out
    cdef cnp.int8_t[::1] kv = k_out
    cdef cnp.int32_t[::1] iv = i_out
    cdef double ox, oy, oz, dx, dy, dz, t, best
    cdef int kind
    cdef Py_ssize_t idx
    with nogil:
        for i in range(n):
            ox = origins[i, 0]
            oy = origins[i, 1]
            oz = origins[i, 2]
            dx = dirs[i, 0]
            dy = dirs[i, 1]
            dz = dirs[i, 2]
            best = 1e300
            kind = MISS
            idx = -1
            if ground and dy != 0.0:
                t = -oy / dy
                if t > EPS:
                    best = t
                    kind = PLANE
                    idx = 0
            for j in range(ns):
                t = _sphere(ox, oy, oz, dx, dy, dz, spheres[j, 0], spheres[j, 1],
                            spheres[j, 2], spheres[j, 3])
                if t > 0.0 and t < best:
                    best = t
                    kind = SPHERE
                    idx = j
            for j in range(nb):
                t = _box(ox, oy, oz, dx, dy, dz, boxes, j)
                if t > 0.0 and t < best:
                    best = t
                    kind = BOX
                    idx = j
            for j in range(nc):
                t = _capsule(ox, oy, oz, dx, dy, dz, capsules, j)
                if t > 0.0 and t < best:
                    best = t
                    kind = CAPSULE
                    idx = j
            if kind != MISS:
                tv[i] = best
                kv[i] = kind
                iv[i] = idx
    return t_out, k_out, i_out
