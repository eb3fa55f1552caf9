"""Deterministic ray casting of :class:`~scenectx.scene.SceneSpec` scenes.

Primary rays only, one directional light plus an ambient term. The subject is
appended after the static geometry so the static primitives keep their
indices, which makes renders with and without the subject bit-identical
wherever the subject is not the closest hit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import EyeInsideGeometry
from .geometry import CameraPose, Trajectory, camera_rays
from .panorama import Panorama, texel_directions
from .scene import SceneSpec

STRIPE_DARKEN = 0.45
# the checkerboard fades to its mean color once a tile subtends less than
# CHECKER_FADE[1] radians (fully faded below CHECKER_FADE[0]); the fade depends
# only on eye and hit point, so every render path from one eye agrees on it
CHECKER_FADE = (0.02, 0.08)
SHADOW_BIAS = 1e-4


@dataclass(frozen=True)
class _Packed:
    spheres: np.ndarray      # (S, 4) center, radius
    boxes: np.ndarray        # (B, 6) min, max
    capsules: np.ndarray     # (C, 7) a, b, radius
    sphere_rgb: np.ndarray
    box_rgb: np.ndarray
    capsule_rgb: np.ndarray
    sphere_stripe: np.ndarray  # (S, 2) period, base height
    box_stripe: np.ndarray
    sphere_subject: np.ndarray  # bool
    capsule_subject: np.ndarray


def _pack(scene: SceneSpec, frame: int, with_subject: bool) -> _Packed:
    sph, sph_rgb, sph_st, sph_subj = [], [], [], []
    box, box_rgb, box_st = [], [], []
    cap, cap_rgb, cap_subj = [], [], []
    for o in scene.objects:
        c = np.asarray(o.center, dtype=np.float64)
        if o.kind == "sphere":
            sph.append([*c, o.size[0]])
            sph_rgb.append(o.albedo)
            sph_st.append([o.stripe_period, c[1] - o.size[0]])
            sph_subj.append(False)
        else:
            h = np.asarray(o.size, dtype=np.float64)
            box.append([*(c - h), *(c + h)])
            box_rgb.append(o.albedo)
            box_st.append([o.stripe_period, c[1] - h[1]])
    if with_subject:
        capsules, spheres = scene.subject.primitives(frame)
        for a, b, r, rgb in capsules:
            cap.append([*a, *b, r])
            cap_rgb.append(rgb)
            cap_subj.append(True)
        for c, r, rgb in spheres:
            sph.append([*c, r])
            sph_rgb.append(rgb)
            sph_st.append([0.0, 0.0])
            sph_subj.append(True)

    def arr(x, w):
        return np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(-1, w))

    return _Packed(
        arr(sph, 4), arr(box, 6), arr(cap, 7),
        arr(sph_rgb, 3), arr(box_rgb, 3), arr(cap_rgb, 3),
        arr(sph_st, 2), arr(box_st, 2),
        np.asarray(sph_subj, dtype=bool), np.asarray(cap_subj, dtype=bool),
    )


def _stripe(albedo, period_base, y):
    period = period_base[:, 0]
    base = period_base[:, 1]
    striped = period > 0
    band = np.floor((y - base) / np.where(striped, period, 1.0))
    odd = striped & (np.mod(band, 2.0) == 1.0)
    return albedo * np.where(odd, 1.0 - STRIPE_DARKEN, 1.0)[:, None]


def _shade(scene: SceneSpec, pk: _Packed, origins, dirs, shadows: bool):
    kern = _backend.kernels
    t, kind, idx = kern.closest_hit(origins, dirs, pk.spheres, pk.boxes, pk.capsules, scene.has_ground)
    n = origins.shape[0]
    color = np.empty((n, 3))
    color[:] = scene.sky
    subject = np.zeros(n, dtype=bool)
    hit = kind != 0
    if not hit.any():
        return color, subject
    p = origins[hit] + t[hit, None] * dirs[hit]
    k = kind[hit]
    j = idx[hit]
    normal = np.zeros_like(p)
    albedo = np.zeros_like(p)

    m = k == 1
    if m.any():
        normal[m] = (0.0, 1.0, 0.0)
        g = scene.ground
        parity = (np.floor(p[m, 0] / g.tile) + np.floor(p[m, 2] / g.tile)) % 2.0
        a, b = np.asarray(g.color_a), np.asarray(g.color_b)
        mean = 0.5 * (a + b)
        extent = g.tile * np.abs(dirs[hit][m, 1]) / t[hit][m]
        lo, hi = CHECKER_FADE
        contrast = np.clip((extent - lo) / (hi - lo), 0.0, 1.0)[:, None]
        tile = np.where((parity == 0.0)[:, None], a, b)
        albedo[m] = mean + contrast * (tile - mean)
    m = k == 2
    if m.any():
        jj = j[m]
        normal[m] = (p[m] - pk.spheres[jj, :3]) / pk.spheres[jj, 3:4]
        albedo[m] = _stripe(pk.sphere_rgb[jj], pk.sphere_stripe[jj], p[m, 1])
    m = k == 3
    if m.any():
        jj = j[m]
        lo, hi = pk.boxes[jj, :3], pk.boxes[jj, 3:]
        center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        q = (p[m] - center) / half
        axis = np.argmax(np.abs(q), axis=1)
        nb = np.zeros_like(q)
        nb[np.arange(len(q)), axis] = np.sign(q[np.arange(len(q)), axis])
        normal[m] = nb
        albedo[m] = _stripe(pk.box_rgb[jj], pk.box_stripe[jj], p[m, 1])
    m = k == 4
    if m.any():
        jj = j[m]
        a, b, r = pk.capsules[jj, :3], pk.capsules[jj, 3:6], pk.capsules[jj, 6:7]
        ab = b - a
        s = np.clip(np.sum((p[m] - a) * ab, axis=1) / np.sum(ab * ab, axis=1), 0.0, 1.0)
        normal[m] = (p[m] - (a + s[:, None] * ab)) / r
        albedo[m] = pk.capsule_rgb[jj]

    d = dirs[hit]
    flip = np.sum(normal * d, axis=1) > 0.0
    normal[flip] *= -1.0
    light = np.asarray(scene.light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    lambert = np.maximum(0.0, normal @ light)
    if shadows:
        so = np.ascontiguousarray(p + SHADOW_BIAS * normal)
        sd = np.ascontiguousarray(np.broadcast_to(light, so.shape))
        _, sk, _ = kern.closest_hit(so, sd, pk.spheres, pk.boxes, pk.capsules, False)
        lambert = np.where(sk != 0, 0.0, lambert)
    color[hit] = np.clip(albedo * (scene.ambient + scene.light_intensity * lambert)[:, None], 0.0, 1.0)

    subj = np.zeros(len(k), dtype=bool)
    if pk.sphere_subject.any():
        subj |= (k == 2) & pk.sphere_subject[np.where(k == 2, j, 0)]
    if pk.capsule_subject.any():
        subj |= (k == 4) & pk.capsule_subject[np.where(k == 4, j, 0)]
    subject[hit] = subj
    return color, subject


def cast(scene: SceneSpec, origins, dirs, frame: int = 0, with_subject: bool = True,
         shadows: bool = False):
    """Shade arbitrary rays; returns ``(rgb (N, 3), subject_hit (N,))``."""
    dirs = np.asarray(dirs, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs / np.linalg.norm(dirs, axis=-1, keepdims=True))
    origins = np.ascontiguousarray(np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape))
    return _shade(scene, _pack(scene, frame, with_subject), origins, dirs, shadows)


def render_frame(scene: SceneSpec, pose: CameraPose, frame_index: int = 0, with_subject: bool = True,
                 w: int = 64, h: int = 64, fov: float = 90.0, shadows: bool = False):
    """Render one image; returns ``(rgb (h, w, 3), subject_mask (h, w))``.

    Shadows are off by default: a shadow cast by the subject would break the
    with/without background equality.
    """
    rays = camera_rays(w, h, fov).reshape(-1, 3) @ pose.rotation
    rgb, mask = cast(scene, pose.eye, rays, frame_index, with_subject, shadows)
    return rgb.reshape(h, w, 3), mask.reshape(h, w)


def render_video(scene: SceneSpec, traj: Trajectory, with_subject: bool = True,
                 w: int = 64, h: int = 64, fov: float = 90.0, shadows: bool = False):
    """Render every trajectory frame; the frame index drives the animation."""
    frames = np.empty((traj.frame_count, h, w, 3))
    masks = np.empty((traj.frame_count, h, w), dtype=bool)
    for i, pose in enumerate(traj.poses):
        frames[i], masks[i] = render_frame(scene, pose, i, with_subject, w, h, fov, shadows)
    return frames, masks


def eye_inside(scene: SceneSpec, eye) -> bool:
    e = np.asarray(eye, dtype=np.float64)
    for o in scene.objects:
        c = np.asarray(o.center, dtype=np.float64)
        if o.kind == "sphere":
            if np.linalg.norm(e - c) < o.size[0]:
                return True
        elif np.all(np.abs(e - c) < np.asarray(o.size)):
            return True
    return False


def render_panorama(scene: SceneSpec, eye, pano_h: int = 512, shadows: bool = False) -> Panorama:
    """Equirectangular render of the static scene (subject excluded) from ``eye``."""
    if eye_inside(scene, eye):
        raise EyeInsideGeometry(f"panorama eye {tuple(eye)} is inside scene geometry")
    dirs = texel_directions(pano_h).reshape(-1, 3)
    rgb, _ = cast(scene, eye, dirs, 0, False, shadows)
    return Panorama(rgb.reshape(pano_h, 2 * pano_h, 3))
