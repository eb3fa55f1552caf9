"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 256]

Prints one line per kernel with the best-of-N wall time of each backend, the
speedup, and whether the outputs agree bit for bit.
"""

import argparse
import time

import numpy as np

from scenectx import _backend
from scenectx.geometry import camera_rays, look_at
from scenectx.panorama import texel_directions, direction_to_lonlat, lonlat_to_pixel
from scenectx.render import _pack
from scenectx.scene import build_scene


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in zip(a, b))


def workloads(size):
    rng = np.random.default_rng(0)
    pano = rng.uniform(0, 1, (size, 2 * size, 3))
    lon, lat = direction_to_lonlat(texel_directions(size).reshape(-1, 3) @ np.diag([1.0, 1.0, -1.0]))
    u, v = lonlat_to_pixel(lon + 0.3, lat, 2 * size, size)
    u, v = np.ascontiguousarray(u.ravel()), np.ascontiguousarray(v.ravel())

    scene = build_scene(0)
    pk = _pack(scene, 0, True)
    pose = look_at((0.0, 3.0, 4.0), (0.0, 1.0, 0.0))
    dirs = np.ascontiguousarray(camera_rays(size, size, 90.0).reshape(-1, 3) @ pose.rotation)
    origins = np.ascontiguousarray(np.broadcast_to(pose.eye, dirs.shape))
    return {
        f"bilinear_wrap {size}x{2 * size}": lambda k: k.bilinear_wrap(pano, u, v),
        f"closest_hit {size}x{size} rays": lambda k: k.closest_hit(origins, dirs, pk.spheres, pk.boxes,
                                                                   pk.capsules, True),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=256)
    args = ap.parse_args(argv)
    py = _backend.get("python")
    try:
        comp = _backend.get("compiled")
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")
        return 1
    print(f"{'kernel':34s} {'compiled':>10s} {'python':>10s} {'speedup':>8s}  equal")
    for name, fn in workloads(args.size).items():
        tc, oc = best_of(lambda: fn(comp), args.repeat)
        tp, op = best_of(lambda: fn(py), args.repeat)
        print(f"{name:34s} {tc * 1e3:9.2f}ms {tp * 1e3:9.2f}ms {tp / tc:7.1f}x  {same(oc, op)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
