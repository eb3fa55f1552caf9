"""Pure-numpy fallback for the compiled kernels in ``_kernels.pyx``.

Both modules expose the same functions and evaluate the same expressions in
the same order, so results agree bit for bit.
"""

import numpy as np

EPS = 1e-6

MISS, PLANE, SPHERE, BOX, CAPSULE = 0, 1, 2, 3, 4


def bilinear_wrap(img, u, v):
    """Sample ``img`` at fractional pixel coords; wrap along x, clamp along y."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    H, W = img.shape[:2]
    fx0 = np.floor(u)
    fy0 = np.floor(v)
    fx = (u - fx0)[:, None]
    fy = (v - fy0)[:, None]
    x0 = fx0.astype(np.int64) % W
    x1 = x0 + 1
    x1[x1 == W] = 0
    y0i = fy0.astype(np.int64)
    y0 = np.clip(y0i, 0, H - 1)
    y1 = np.clip(y0i + 1, 0, H - 1)
    p00 = img[y0, x0]
    p01 = img[y0, x1]
    p10 = img[y1, x0]
    p11 = img[y1, x1]
    top = p00 + fx * (p01 - p00)
    bot = p10 + fx * (p11 - p10)
    return top + fy * (bot - top)


def _sphere(ox, oy, oz, dx, dy, dz, cx, cy, cz, r):
    px = ox - cx
    py = oy - cy
    pz = oz - cz
    b = px * dx + py * dy + pz * dz
    c = (px * px + py * py + pz * pz) - r * r
    h = b * b - c
    ok = h >= 0.0
    s = np.sqrt(np.where(ok, h, 0.0))
    t1 = -b - s
    t2 = -b + s
    t = np.where(t1 > EPS, t1, np.where(t2 > EPS, t2, -1.0))
    return np.where(ok, t, -1.0)


def _box(o, d, lo, hi):
    n = o.shape[0]
    tn = np.full(n, -1e300)
    tf = np.full(n, 1e300)
    alive = np.ones(n, dtype=bool)
    for a in range(3):
        oa = o[:, a]
        da = d[:, a]
        flat = da == 0.0
        alive &= ~(flat & ((oa < lo[a]) | (oa > hi[a])))
        dsafe = np.where(flat, 1.0, da)
        t1 = (lo[a] - oa) / dsafe
        t2 = (hi[a] - oa) / dsafe
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        tn = np.where(flat | ~(near > tn), tn, near)
        tf = np.where(flat | ~(far < tf), tf, far)
    alive &= ~((tn > tf) | (tf <= EPS))
    t = np.where(tn > EPS, tn, tf)
    return np.where(alive, t, -1.0)


def _capsule(ox, oy, oz, dx, dy, dz, cap):
    ax, ay, az, bx, by, bz, r = (float(v) for v in cap)
    bax = bx - ax
    bay = by - ay
    baz = bz - az
    oax = ox - ax
    oay = oy - ay
    oaz = oz - az
    baba = bax * bax + bay * bay + baz * baz
    bard = bax * dx + bay * dy + baz * dz
    baoa = bax * oax + bay * oay + baz * oaz
    rdoa = dx * oax + dy * oay + dz * oaz
    oaoa = oax * oax + oay * oay + oaz * oaz
    qa = baba - bard * bard
    qb = baba * rdoa - baoa * bard
    qc = baba * oaoa - baoa * baoa - r * r * baba
    h = qb * qb - qa * qc
    body = (qa > 1e-12) & (h >= 0.0)
    qa_safe = np.where(body, qa, 1.0)
    t = (-qb - np.sqrt(np.where(body, h, 0.0))) / qa_safe
    y = baoa + t * bard
    best = np.where(body & (t > EPS) & (y > 0.0) & (y < baba), t, -1.0)
    for cx, cy, cz in ((ax, ay, az), (bx, by, bz)):
        ts = _sphere(ox, oy, oz, dx, dy, dz, cx, cy, cz, r)
        best = np.where((ts > 0.0) & ((best < 0.0) | (ts < best)), ts, best)
    return best


def closest_hit(origins, dirs, spheres, boxes, capsules, ground):
    """Nearest intersection per ray; see the compiled version for the contract."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = origins.shape[0]
    ox, oy, oz = origins[:, 0], origins[:, 1], origins[:, 2]
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    best = np.full(n, 1e300)
    kind = np.zeros(n, dtype=np.int8)
    idx = np.full(n, -1, dtype=np.int32)

    if ground:
        nz = dy != 0.0
        t = -oy / np.where(nz, dy, 1.0)
        hit = nz & (t > EPS)
        best = np.where(hit, t, best)
        kind[hit] = PLANE
        idx[hit] = 0

    def take(t, k, j):
        nonlocal best
        hit = (t > 0.0) & (t < best)
        best = np.where(hit, t, best)
        kind[hit] = k
        idx[hit] = j

    for j, s in enumerate(np.asarray(spheres, dtype=np.float64).reshape(-1, 4)):
        take(_sphere(ox, oy, oz, dx, dy, dz, s[0], s[1], s[2], s[3]), SPHERE, j)
    for j, b in enumerate(np.asarray(boxes, dtype=np.float64).reshape(-1, 6)):
        take(_box(origins, dirs, b[:3], b[3:]), BOX, j)
    for j, c in enumerate(np.asarray(capsules, dtype=np.float64).reshape(-1, 7)):
        take(_capsule(ox, oy, oz, dx, dy, dz, c), CAPSULE, j)

    t_out = np.where(kind != MISS, best, np.inf)
    return t_out, kind, idx
