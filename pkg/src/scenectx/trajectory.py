"""Cinematographic camera trajectories: pan, tilt, arc, dolly, truck, pedestal.

Rotational magnitudes are degrees. Translational magnitudes are factors of the
start distance between camera and subject. Every movement is linear in the
frame index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadDirection, FactorOutOfRange, MagnitudeOutOfRange, SubjectAtEye
from .geometry import CameraPose, Trajectory, look_at, rot_x, yaw_rotation

DEFAULT_FRAMES = 77
DEFAULT_SWEEP = 75.0
DEFAULT_DISTANCE = 4.0

KINDS = ("pan", "tilt", "arc_horizontal", "arc_vertical", "dolly", "truck", "pedestal")

DIRECTIONS = {
    "pan": ("left", "right"),
    "arc_horizontal": ("left", "right"),
    "tilt": ("up", "down"),
    "arc_vertical": ("up", "down"),
    "dolly": ("forward", "backward"),
    "truck": ("left", "right"),
    "pedestal": ("up", "down"),
}

VERTICAL_RANGE = (10.0, 45.0)

# legal factor ranges, keyed by direction of the translational move
FACTOR_RANGES = {
    "left": (0.25, 2.0),
    "right": (0.25, 2.0),
    "forward": (0.25, 1.25),
    "backward": (0.25, 2.0),
    "up": (0.25, 2.0 / 3.0),
    "down": (0.25, 2.0 / 3.0),
}

WORLD_UP = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True, eq=False)
class MovementSpec:
    kind: str
    direction: str
    magnitude: float = DEFAULT_SWEEP
    frames: int = DEFAULT_FRAMES
    subject_position: np.ndarray | None = None
    start_pose: CameraPose = field(default_factory=CameraPose.identity)

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "direction": self.direction,
            "magnitude": float(self.magnitude),
            "frames": int(self.frames),
        }


def _check_direction(spec: MovementSpec) -> None:
    if spec.kind not in DIRECTIONS:
        raise BadDirection(f"unknown movement kind {spec.kind!r}")
    if spec.direction not in DIRECTIONS[spec.kind]:
        raise BadDirection(
            f"{spec.kind} moves {'/'.join(DIRECTIONS[spec.kind])}, not {spec.direction!r}"
        )


def _check_vertical(spec: MovementSpec) -> None:
    lo, hi = VERTICAL_RANGE
    if not lo <= spec.magnitude <= hi:
        raise MagnitudeOutOfRange(f"{spec.kind} magnitude must lie in [{lo}, {hi}] degrees")


def _steps(spec: MovementSpec) -> np.ndarray:
    if spec.frames < 2:
        raise ValueError("a movement needs at least 2 frames")
    return np.arange(spec.frames) / (spec.frames - 1)


def _subject(spec: MovementSpec) -> np.ndarray:
    if spec.subject_position is None:
        raise ValueError(f"{spec.kind} needs subject_position")
    return np.asarray(spec.subject_position, dtype=np.float64)


def pan(spec: MovementSpec) -> Trajectory:
    """Rotate in place about the world vertical axis through the camera."""
    if spec.kind != "pan":
        raise BadDirection(f"pan() got kind {spec.kind!r}")
    _check_direction(spec)
    sign = 1.0 if spec.direction == "right" else -1.0
    c0 = spec.start_pose.rotation.T
    eye = spec.start_pose.eye
    poses = []
    for s in _steps(spec):
        if spec.magnitude * s == 0.0:
            poses.append(spec.start_pose)
            continue
        r = (yaw_rotation(sign * spec.magnitude * s) @ c0).T
        poses.append(CameraPose(r, -r @ eye))
    return Trajectory(tuple(poses))


def tilt(spec: MovementSpec) -> Trajectory:
    """Rotate in place about the camera's own horizontal axis."""
    if spec.kind != "tilt":
        raise BadDirection(f"tilt() got kind {spec.kind!r}")
    _check_direction(spec)
    _check_vertical(spec)
    sign = 1.0 if spec.direction == "up" else -1.0
    c0 = spec.start_pose.rotation.T
    eye = spec.start_pose.eye
    poses = []
    for s in _steps(spec):
        if spec.magnitude * s == 0.0:
            poses.append(spec.start_pose)
            continue
        r = (c0 @ rot_x(sign * spec.magnitude * s)).T
        poses.append(CameraPose(r, -r @ eye))
    return Trajectory(tuple(poses))


def arc(spec: MovementSpec) -> Trajectory:
    """Orbit the subject on a circle while looking at it.

    ``arc_horizontal`` turns about the vertical axis through the subject;
    "right" moves the camera toward its own right. ``arc_vertical`` raises or
    lowers the camera on the vertical circle through the start eye.
    """
    if spec.kind not in ("arc_horizontal", "arc_vertical"):
        raise BadDirection(f"arc() got kind {spec.kind!r}")
    _check_direction(spec)
    subject = _subject(spec)
    eye0 = spec.start_pose.eye
    offset = eye0 - subject
    radius = float(np.linalg.norm(offset))
    if radius < 1e-6:
        raise SubjectAtEye("camera starts on the subject")
    eyes = []
    if spec.kind == "arc_horizontal":
        sign = 1.0 if spec.direction == "right" else -1.0
        for s in _steps(spec):
            eyes.append(subject + yaw_rotation(-sign * spec.magnitude * s) @ offset)
    else:
        _check_vertical(spec)
        sign = 1.0 if spec.direction == "up" else -1.0
        horiz = np.array([offset[0], 0.0, offset[2]])
        hn = float(np.linalg.norm(horiz))
        if hn < 1e-9:
            raise SubjectAtEye("vertical arc needs a horizontal offset from the subject")
        horiz /= hn
        elev0 = math.atan2(offset[1], hn)
        for s in _steps(spec):
            e = elev0 + math.radians(sign * spec.magnitude * s)
            eyes.append(subject + radius * (math.cos(e) * horiz + math.sin(e) * WORLD_UP))
    poses = []
    for i, eye in enumerate(eyes):
        if np.linalg.norm(eye - subject) < 1e-6:
            raise SubjectAtEye(f"camera reaches the subject at frame {i}")
        poses.append(look_at(eye, subject, WORLD_UP))
    return Trajectory(tuple(poses))


def linear_move(spec: MovementSpec) -> Trajectory:
    """Dolly, truck, or pedestal: translate along a camera-local axis."""
    if spec.kind not in ("dolly", "truck", "pedestal"):
        raise BadDirection(f"linear_move() got kind {spec.kind!r}")
    _check_direction(spec)
    lo, hi = FACTOR_RANGES[spec.direction]
    if not lo <= spec.magnitude <= hi:
        raise FactorOutOfRange(
            f"{spec.kind} {spec.direction} factor {spec.magnitude} outside [{lo:.4g}, {hi:.4g}]"
        )
    pose = spec.start_pose
    axis = {
        "forward": pose.forward,
        "backward": -pose.forward,
        "right": pose.right,
        "left": -pose.right,
        "up": pose.up,
        "down": -pose.up,
    }[spec.direction]
    eye0 = pose.eye
    total = spec.magnitude * float(np.linalg.norm(eye0 - _subject(spec)))
    r = pose.rotation
    poses = [CameraPose(r, -r @ (eye0 + (total * s) * axis)) for s in _steps(spec)]
    return Trajectory(tuple(poses))


def generate(spec: MovementSpec) -> Trajectory:
    if spec.kind == "pan":
        return pan(spec)
    if spec.kind == "tilt":
        return tilt(spec)
    if spec.kind in ("arc_horizontal", "arc_vertical"):
        return arc(spec)
    if spec.kind in ("dolly", "truck", "pedestal"):
        return linear_move(spec)
    raise BadDirection(f"unknown movement kind {spec.kind!r}")


def start_pose_for(subject_position, subject_facing, azimuth: float,
                   distance: float = DEFAULT_DISTANCE, height: float | None = None) -> CameraPose:
    """Camera in front of the subject, rotated ``azimuth`` degrees off its facing.

    The camera sits ``distance`` away horizontally. With ``height=None`` it is
    level with ``subject_position`` and looks at it; otherwise it is placed at
    world height ``height`` and still looks at the subject.
    """
    subject = np.asarray(subject_position, dtype=np.float64)
    facing = np.asarray(subject_facing, dtype=np.float64).copy()
    facing[1] = 0.0
    facing /= np.linalg.norm(facing)
    offset = yaw_rotation(-azimuth) @ facing * distance
    eye = subject + offset
    if height is not None:
        eye[1] = height
    return look_at(eye, subject, WORLD_UP)


def sample_movement(rng_seed: int, subject_position, subject_facing, frames: int = DEFAULT_FRAMES,
                    distance: float = DEFAULT_DISTANCE, height: float | None = None):
    """Draw a movement from the taxonomy and build its trajectory.

    Kind and direction are uniform, the magnitude is uniform over the legal
    range (the horizontal sweeps are fixed at 75 degrees), and the start
    azimuth is uniform in [-45, 45] degrees relative to ``subject_facing``.
    """
    rng = np.random.default_rng(rng_seed)
    kind = KINDS[int(rng.integers(len(KINDS)))]
    dirs = DIRECTIONS[kind]
    direction = dirs[int(rng.integers(len(dirs)))]
    if kind in ("pan", "arc_horizontal"):
        magnitude = DEFAULT_SWEEP
    elif kind in ("tilt", "arc_vertical"):
        magnitude = float(rng.uniform(*VERTICAL_RANGE))
    else:
        magnitude = float(rng.uniform(*FACTOR_RANGES[direction]))
    azimuth = float(rng.uniform(-45.0, 45.0))
    start = start_pose_for(subject_position, subject_facing, azimuth, distance, height)
    spec = MovementSpec(kind, direction, magnitude, frames,
                        np.asarray(subject_position, dtype=np.float64), start)
    return spec, generate(spec)


def start_azimuth(spec: MovementSpec, subject_facing) -> float:
    """Signed horizontal angle (degrees) of the start eye off the subject's facing."""
    off = spec.start_pose.eye - _subject(spec)
    f = np.asarray(subject_facing, dtype=np.float64)
    a = math.atan2(off[0], off[2]) - math.atan2(f[0], f[2])
    return math.degrees(math.remainder(a, 2 * math.pi))
