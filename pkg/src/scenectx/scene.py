"""Procedural scenes: a checkerboard ground, static props, and one animated subject."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ANIMATIONS = ("wave", "bounce", "spin", "walk_in_place")

PALETTES = (
    ((0.20, 0.25, 0.60), (0.85, 0.20, 0.15), (0.95, 0.80, 0.65)),
    ((0.15, 0.15, 0.15), (0.95, 0.85, 0.10), (0.55, 0.38, 0.25)),
    ((0.30, 0.55, 0.25), (0.90, 0.90, 0.92), (0.98, 0.75, 0.60)),
    ((0.55, 0.10, 0.45), (0.10, 0.70, 0.80), (0.80, 0.60, 0.45)),
)

PROMPT_VOCAB = len(PALETTES) * len(ANIMATIONS)

# camera rigs look level at this height above the subject's feet; keeps the
# lowest pedestal move (2/3 of the 4-unit start distance) above the ground
AIM_HEIGHT = 3.0
SUBJECT_RADIUS = 1.0
MIN_PROP_DISTANCE = 5.5
MAX_PROP_DISTANCE = 10.0
# props stay out of the wedge in front of the subject where camera rigs start
# (azimuth within +-45 deg of facing) and dolly back along, and their near edge
# stays clear of the 4-unit rig circle
CAMERA_WEDGE = 45.0
PROP_NEAR_EDGE = 4.5


@dataclass(frozen=True)
class GroundSpec:
    color_a: tuple
    color_b: tuple
    tile: float


@dataclass(frozen=True)
class SceneObject:
    """A sphere (``size`` = radius) or axis-aligned box (``size`` = half extents)."""

    kind: str
    center: tuple
    size: tuple
    albedo: tuple
    stripe_period: float = 0.0


@dataclass(frozen=True)
class SubjectSpec:
    base_position: tuple
    facing: tuple
    animation: str = "wave"
    period: int = 16
    palette: int = 0
    # sized so the head reaches rig height: a level camera keeps it in view up close
    leg_height: float = 1.5
    leg_radius: float = 0.25
    torso_height: float = 1.0
    torso_radius: float = 0.35
    head_radius: float = 0.3

    @property
    def prompt_tag(self) -> int:
        return self.palette * len(ANIMATIONS) + ANIMATIONS.index(self.animation)

    @property
    def aim_point(self) -> np.ndarray:
        """Point the camera rig tracks: above the feet, at rig height."""
        return np.asarray(self.base_position, dtype=np.float64) + np.array([0.0, AIM_HEIGHT, 0.0])

    def primitives(self, frame: int):
        """Capsules ``(a, b, r, rgb)`` and spheres ``(c, r, rgb)`` at ``frame``.

        Parts with non-positive radius are left out.
        """
        base = np.asarray(self.base_position, dtype=np.float64)
        facing = np.asarray(self.facing, dtype=np.float64)
        side = np.array([-facing[2], 0.0, facing[0]])
        phase = 0.0 if self.period <= 0 else 2.0 * math.pi * (frame % self.period) / self.period
        s = math.sin(phase)
        lift = np.zeros(3)
        sway = np.zeros(3)
        foot = np.zeros(3)
        if self.animation == "bounce":
            lift = np.array([0.0, 0.25 * abs(s), 0.0])
        elif self.animation == "wave":
            sway = 0.25 * s * side
        elif self.animation == "spin":
            sway = 0.2 * (math.cos(phase) * side + s * facing) if self.period > 0 else np.zeros(3)
        elif self.animation == "walk_in_place":
            foot = 0.2 * s * facing
            lift = np.array([0.0, 0.05 * abs(s), 0.0])
        legs, torso, head = PALETTES[self.palette]
        capsules, spheres = [], []
        hip = base + lift + np.array([0.0, self.leg_height, 0.0])
        feet = base + lift + foot + np.array([0.0, self.leg_radius, 0.0])
        neck = hip + np.array([0.0, self.torso_height, 0.0]) + sway
        if self.leg_radius > 0:
            capsules.append((feet, hip, self.leg_radius, legs))
        if self.torso_radius > 0:
            capsules.append((hip, neck, self.torso_radius, torso))
        if self.head_radius > 0:
            spheres.append((neck + np.array([0.0, self.head_radius + 0.05, 0.0]) + 0.3 * sway,
                            self.head_radius, head))
        return capsules, spheres


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    ground: GroundSpec
    objects: tuple
    light_dir: tuple
    light_intensity: float
    ambient: float
    sky: tuple
    subject: SubjectSpec
    has_ground: bool = True

    def layout_key(self) -> tuple:
        return tuple((o.kind, tuple(round(c, 6) for c in o.center), tuple(round(v, 6) for v in o.size))
                     for o in self.objects)


def _color(rng, lo=0.15, hi=0.95) -> tuple:
    return tuple(float(v) for v in rng.uniform(lo, hi, size=3))


def build_scene(seed: int, n_objects: tuple = (3, 6)) -> SceneSpec:
    """Deterministic scene from ``seed``; the subject stands at the origin."""
    rng = np.random.default_rng([seed, 0x5CE4E])
    ground = GroundSpec(_color(rng, 0.3, 0.9), _color(rng, 0.05, 0.5), float(rng.uniform(0.8, 1.6)))
    count = int(rng.integers(n_objects[0], n_objects[1] + 1))
    fa = rng.uniform(0.0, 2.0 * math.pi)
    objects = []
    placed = []
    while len(objects) < count:
        ang = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(MIN_PROP_DISTANCE, MAX_PROP_DISTANCE)
        x, z = dist * math.sin(ang), dist * math.cos(ang)
        stripe = float(rng.uniform(0.2, 0.5)) if rng.random() < 0.5 else 0.0
        albedo = _color(rng)
        if rng.random() < 0.5:
            r = float(rng.uniform(0.5, 1.2))
            obj = SceneObject("sphere", (x, r, z), (r,), albedo, stripe)
            extent = r
        else:
            hx, hy, hz = (float(v) for v in rng.uniform(0.4, 1.2, size=3))
            obj = SceneObject("box", (x, hy, z), (hx, hy, hz), albedo, stripe)
            extent = math.hypot(hx, hz)
        if dist - extent < PROP_NEAR_EDGE:
            continue
        off = abs((ang - fa + math.pi) % (2.0 * math.pi) - math.pi)
        if off < math.radians(CAMERA_WEDGE) + math.asin(min(1.0, (extent + 0.3) / dist)):
            continue
        if any(math.hypot(x - px, z - pz) < extent + pe + 0.2 for px, pz, pe in placed):
            continue
        placed.append((x, z, extent))
        objects.append(obj)
    az = rng.uniform(0.0, 2.0 * math.pi)
    el = math.radians(rng.uniform(35.0, 70.0))
    light = (math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az))
    subject = SubjectSpec(
        base_position=(0.0, 0.0, 0.0),
        facing=(math.sin(fa), 0.0, math.cos(fa)),
        animation=ANIMATIONS[int(rng.integers(len(ANIMATIONS)))],
        period=int(rng.integers(8, 25)),
        palette=int(rng.integers(len(PALETTES))),
    )
    sky = (float(rng.uniform(0.55, 0.7)), float(rng.uniform(0.7, 0.85)), float(rng.uniform(0.88, 0.98)))
    return SceneSpec(seed, ground, tuple(objects), light, 0.8, 0.25, sky, subject)


# --- analytic clearance checks ---------------------------------------------

def _segment_point_distance(a, b, p) -> float:
    ab = b - a
    denom = float(ab @ ab)
    s = 0.0 if denom == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(a + s * ab - p))


def _point_box_distance(p, lo, hi) -> float:
    return math.sqrt(sum(max(0.0, l - x, x - h) ** 2 for x, l, h in zip(p, lo, hi)))


def _segment_box_distance(a, b, lo, hi) -> float:
    # distance to a convex set is convex along the segment: ternary search
    a, b, lo, hi = (tuple(float(v) for v in x) for x in (a, b, lo, hi))
    d = tuple(q - p for p, q in zip(a, b))

    def f(s):
        return _point_box_distance(tuple(p + s * e for p, e in zip(a, d)), lo, hi)

    lo_s, hi_s = 0.0, 1.0
    for _ in range(80):
        m1 = lo_s + (hi_s - lo_s) / 3.0
        m2 = hi_s - (hi_s - lo_s) / 3.0
        if f(m1) < f(m2):
            hi_s = m2
        else:
            lo_s = m1
    return min(f(0.0), f(1.0), f(0.5 * (lo_s + hi_s)))


def subject_clearance(scene: SceneSpec, frame: int) -> float:
    """Smallest gap between the subject and any static object (negative = overlap)."""
    capsules, spheres = scene.subject.primitives(frame)
    parts = [(a, b, r) for a, b, r, _ in capsules] + [(c, c, r) for c, r, _ in spheres]
    gap = math.inf
    for obj in scene.objects:
        c = np.asarray(obj.center, dtype=np.float64)
        for a, b, r in parts:
            if obj.kind == "sphere":
                d = _segment_point_distance(a, b, c) - obj.size[0]
            else:
                h = np.asarray(obj.size, dtype=np.float64)
                d = _segment_box_distance(a, b, c - h, c + h)
            gap = min(gap, d - r)
    return gap


def animation_frames(subject: SubjectSpec) -> range:
    return range(max(1, subject.period))
