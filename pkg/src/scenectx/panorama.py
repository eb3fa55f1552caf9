"""Equirectangular panoramas and their perspective views.

Texel ``(row, col)`` of a ``H x 2H`` panorama covers the direction with
longitude ``(col + 0.5) / W * 360 - 180`` and latitude ``90 - (row + 0.5) / H * 180``
(degrees). Longitude 0 is world ``-z`` and grows toward ``+x``, matching yaw in
:mod:`scenectx.geometry`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import BadFov, EmptyOutput, ShapeMismatch
from .geometry import camera_rays, view_to_world

DEFAULT_VIEWS = 20
CONTEXT_FOV = 90.0


def _as_unit_float(pixels) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return np.asarray(arr, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Panorama:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(_as_unit_float(self.pixels))
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeMismatch(f"panorama must be HxWx3, got {px.shape}")
        if px.shape[1] != 2 * px.shape[0]:
            raise ShapeMismatch(f"panorama width must be twice its height, got {px.shape[:2]}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class PerspectiveView:
    pixels: np.ndarray
    yaw: float
    pitch: float
    fov: float

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class SceneContextSet:
    views: tuple[PerspectiveView, ...]
    start_yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))

    def __len__(self) -> int:
        return len(self.views)

    def __getitem__(self, i):
        return self.views[i]

    def pixels(self) -> np.ndarray:
        """Stacked view pixels, shape ``(V, h, w, 3)``."""
        if not self.views:
            return np.zeros((0, 0, 0, 3))
        return np.stack([v.pixels for v in self.views])

    def permuted(self, perm) -> "SceneContextSet":
        return SceneContextSet(tuple(self.views[i] for i in perm), self.start_yaw)


# --- direction <-> texel maps ---------------------------------------------

def lonlat_to_direction(lon, lat) -> np.ndarray:
    """Unit directions for longitude/latitude given in radians."""
    cl = np.cos(lat)
    return np.stack([np.sin(lon) * cl, np.sin(lat), -np.cos(lon) * cl], axis=-1)


def direction_to_lonlat(d) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(d, dtype=np.float64)
    lon = np.arctan2(d[..., 0], -d[..., 2])
    lat = np.arctan2(d[..., 1], np.hypot(d[..., 0], d[..., 2]))
    return lon, lat


def lonlat_to_pixel(lon, lat, width: int, height: int):
    u = (lon + math.pi) / (2.0 * math.pi) * width - 0.5
    v = (math.pi / 2.0 - lat) / math.pi * height - 0.5
    return u, v


def texel_lonlat(height: int) -> tuple[np.ndarray, np.ndarray]:
    """Longitude/latitude (radians) of every texel center, each ``(H, 2H)``."""
    width = 2 * height
    lon = (np.arange(width) + 0.5) / width * 2.0 * math.pi - math.pi
    lat = math.pi / 2.0 - (np.arange(height) + 0.5) / height * math.pi
    return np.meshgrid(lon, lat)


def texel_directions(height: int) -> np.ndarray:
    lon, lat = texel_lonlat(height)
    return lonlat_to_direction(lon, lat)


def sample_directions(pano: Panorama, dirs: np.ndarray) -> np.ndarray:
    """Bilinearly sample ``pano`` along world directions of shape ``(..., 3)``."""
    shape = dirs.shape[:-1]
    lon, lat = direction_to_lonlat(dirs.reshape(-1, 3))
    u, v = lonlat_to_pixel(lon, lat, pano.width, pano.height)
    out = _backend.kernels.bilinear_wrap(pano.pixels, np.ascontiguousarray(u), np.ascontiguousarray(v))
    return np.asarray(out).reshape(*shape, 3)


# --- operations -----------------------------------------------------------

def equirect_to_perspective(pano: Panorama, yaw: float, pitch: float, fov: float,
                            out_w: int, out_h: int) -> PerspectiveView:
    if not (0.0 < fov < 180.0) or not math.isfinite(fov):
        raise BadFov(f"fov must lie in (0, 180), got {fov}")
    if out_w < 1 or out_h < 1:
        raise EmptyOutput(f"output size must be positive, got {out_w}x{out_h}")
    rays = camera_rays(out_w, out_h, fov)
    world = rays @ view_to_world(yaw, pitch).T
    return PerspectiveView(sample_directions(pano, world), float(yaw), float(pitch), float(fov))


def context_yaws(start_yaw: float, v: int) -> list[float]:
    return [start_yaw + i * 360.0 / v for i in range(v)]


def scene_context_from_panorama(pano: Panorama, start_yaw: float = 0.0, v: int = DEFAULT_VIEWS,
                                out_w: int = 64, out_h: int = 64) -> SceneContextSet:
    """``v`` level views with 90 degree FoV, evenly spaced in yaw from ``start_yaw``."""
    if v < 1:
        raise EmptyOutput(f"need at least one view, got {v}")
    views = tuple(
        equirect_to_perspective(pano, yaw, 0.0, CONTEXT_FOV, out_w, out_h)
        for yaw in context_yaws(start_yaw, v)
    )
    return SceneContextSet(views, float(start_yaw))


def rotate_panorama(pano: Panorama, degrees: float) -> Panorama:
    """Panorama whose content at longitude ``lon`` is the input's at ``lon + degrees``."""
    shift = degrees / 360.0 * pano.width
    if float(shift).is_integer():
        return Panorama(np.roll(pano.pixels, -int(shift), axis=1))
    lon, lat = texel_lonlat(pano.height)
    u, v = lonlat_to_pixel(lon + math.radians(degrees), lat, pano.width, pano.height)
    out = _backend.kernels.bilinear_wrap(pano.pixels, u.ravel().copy(), v.ravel().copy())
    return Panorama(np.asarray(out).reshape(pano.pixels.shape))


def downscale2(pixels: np.ndarray) -> np.ndarray:
    """2x2 box downsampling."""
    h, w = pixels.shape[:2]
    p = pixels[: h - h % 2, : w - w % 2]
    return 0.25 * (p[0::2, 0::2] + p[0::2, 1::2] + p[1::2, 0::2] + p[1::2, 1::2])


def _bilinear_clamp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    u = np.clip(u, 0.0, w - 1.0)
    v = np.clip(v, 0.0, h - 1.0)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = (u - x0)[:, None]
    fy = (v - y0)[:, None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
    bot = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
    return top + fy * (bot - top)


def perspective_to_equirect_accumulate(views: SceneContextSet, pano_h: int):
    """Paste views back onto an equirect canvas, averaging where they overlap.

    Each texel gathers a bilinear sample from every view whose frustum contains
    its direction. Returns ``(Panorama, coverage)`` where ``coverage`` is an
    ``(H, 2H)`` boolean mask of texels touched by at least one view.
    """
    if len(views) == 0:
        raise EmptyOutput("no views to accumulate")
    h, w = views[0].height, views[0].width
    fov = views[0].fov
    if any(v.fov != fov or v.pixels.shape != views[0].pixels.shape for v in views):
        raise ShapeMismatch("all views must share fov and resolution")
    focal = (w / 2.0) / math.tan(math.radians(fov) / 2.0)
    dirs = texel_directions(pano_h).reshape(-1, 3)
    acc = np.zeros((dirs.shape[0], 3))
    cnt = np.zeros(dirs.shape[0])
    for view in views:
        cam = dirs @ view_to_world(view.yaw, view.pitch)
        front = cam[:, 2] < 0.0
        depth = np.where(front, -cam[:, 2], 1.0)
        px = cam[:, 0] / depth * focal + w / 2.0 - 0.5
        py = -cam[:, 1] / depth * focal + h / 2.0 - 0.5
        inside = front & (px >= -0.5) & (px <= w - 0.5) & (py >= -0.5) & (py <= h - 0.5)
        if not inside.any():
            continue
        acc[inside] += _bilinear_clamp(np.asarray(view.pixels, dtype=np.float64), px[inside], py[inside])
        cnt[inside] += 1.0
    covered = cnt > 0
    acc[covered] /= cnt[covered, None]
    return Panorama(acc.reshape(pano_h, 2 * pano_h, 3)), covered.reshape(pano_h, 2 * pano_h)
