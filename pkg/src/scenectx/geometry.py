"""Camera poses, trajectories, and pose-error metrics.

Conventions used everywhere in the package:

* right-handed world, ``+y`` up;
* a camera looks down its local ``-z`` axis, ``+x`` is right and ``+y`` up;
* a pose stores the world-to-camera extrinsics ``[R | t]`` with ``t = -R @ eye``;
* yaw is measured in degrees about world ``+y``; yaw 0 looks down world ``-z``
  and positive yaw turns toward world ``+x``; positive pitch looks up.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateLookAt, FormatError, LengthMismatch, NotARotation

ORTHO_TOL = 1e-9
TRAJECTORY_FORMAT_VERSION = 1


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def check_rotation(r: np.ndarray, tol: float = ORTHO_TOL) -> None:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise NotARotation(f"expected a finite 3x3 matrix, got shape {r.shape}")
    err = np.max(np.abs(r.T @ r - np.eye(3)))
    if err >= tol:
        raise NotARotation(f"matrix is not orthonormal (max |R^T R - I| = {err:.3e})")
    det = np.linalg.det(r)
    if abs(det - 1.0) > tol:
        raise NotARotation(f"determinant {det!r} is not +1")


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation))
        object.__setattr__(self, "translation", _frozen(self.translation).reshape(3))
        check_rotation(self.rotation)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "CameraPose":
        m = np.asarray(m, dtype=np.float64).reshape(3, 4)
        return cls(m[:, :3], m[:, 3])

    @property
    def matrix(self) -> np.ndarray:
        """The 3x4 ``[R | t]`` matrix."""
        return np.concatenate([self.rotation, self.translation[:, None]], axis=1)

    @property
    def eye(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        return -self.rotation[2]

    @property
    def right(self) -> np.ndarray:
        return self.rotation[0].copy()

    @property
    def up(self) -> np.ndarray:
        return self.rotation[1].copy()

    def yaw_pitch(self) -> tuple[float, float]:
        """Viewing direction as (yaw, pitch) in degrees."""
        f = self.forward
        yaw = math.degrees(math.atan2(f[0], -f[2]))
        pitch = math.degrees(math.asin(max(-1.0, min(1.0, f[1]))))
        return yaw, pitch

    def allclose(self, other: "CameraPose", atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, rtol=0.0, atol=atol))


@dataclass(frozen=True, eq=False)
class Trajectory:
    poses: tuple[CameraPose, ...]

    def __post_init__(self):
        poses = tuple(self.poses)
        if len(poses) < 2:
            raise LengthMismatch(f"a trajectory needs at least 2 poses, got {len(poses)}")
        object.__setattr__(self, "poses", poses)

    @property
    def frame_count(self) -> int:
        return len(self.poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i: int) -> CameraPose:
        return self.poses[i]

    def __iter__(self):
        return iter(self.poses)

    def matrices(self) -> np.ndarray:
        """Stacked extrinsics, shape ``(f, 3, 4)``."""
        return np.stack([p.matrix for p in self.poses])

    def eyes(self) -> np.ndarray:
        return np.stack([p.eye for p in self.poses])

    @classmethod
    def from_matrices(cls, mats) -> "Trajectory":
        mats = np.asarray(mats, dtype=np.float64).reshape(-1, 3, 4)
        return cls(tuple(CameraPose.from_matrix(m) for m in mats))


@dataclass(frozen=True)
class PoseError:
    rot_err: float
    trans_err: float
    cam_mc: float

    def as_dict(self) -> dict:
        return {"rot_err": self.rot_err, "trans_err": self.trans_err, "cam_mc": self.cam_mc}


# --- elementary rotations -------------------------------------------------

def rot_x(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_rotation(deg: float) -> np.ndarray:
    """Camera-to-world rotation turning the view ``deg`` degrees toward ``+x``."""
    return rot_y(-deg)


def view_to_world(yaw: float, pitch: float) -> np.ndarray:
    """Camera-to-world rotation for a roll-free view (pitch applied first, then yaw)."""
    return yaw_rotation(yaw) @ rot_x(pitch)


def pose_from_yaw_pitch(eye, yaw: float, pitch: float = 0.0) -> CameraPose:
    r = view_to_world(yaw, pitch).T
    return CameraPose(r, -r @ np.asarray(eye, dtype=np.float64))


def direction_from_yaw_pitch(yaw: float, pitch: float = 0.0) -> np.ndarray:
    return view_to_world(yaw, pitch) @ np.array([0.0, 0.0, -1.0])


def camera_rays(width: int, height: int, fov: float) -> np.ndarray:
    """Unnormalized camera-frame ray directions through pixel centers.

    ``fov`` is horizontal, in degrees; pixels are square. Returns ``(h, w, 3)``
    with ``z = -1`` on every ray.
    """
    focal = (width / 2.0) / math.tan(math.radians(fov) / 2.0)
    xs = (np.arange(width) + 0.5 - width / 2.0) / focal
    ys = -(np.arange(height) + 0.5 - height / 2.0) / focal
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy, -np.ones_like(gx)], axis=-1)


# --- operations -----------------------------------------------------------

def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> CameraPose:
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    fwd = target - eye
    dist = np.linalg.norm(fwd)
    if dist <= 1e-9:
        raise DegenerateLookAt("eye and target coincide")
    fwd = fwd / dist
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn <= 1e-9 * max(1.0, np.linalg.norm(up)):
        raise DegenerateLookAt("up vector is parallel to the viewing direction")
    right = right / rn
    true_up = np.cross(right, fwd)
    r = np.stack([right, true_up, -fwd])
    return CameraPose(r, -r @ eye)


def geodesic_angle(r1, r2) -> float:
    """Angle in radians of the relative rotation ``r1 @ r2.T``.

    Equal to ``arccos((trace - 1) / 2)`` but evaluated as an ``atan2`` of the
    skew and trace parts, which stays accurate near 0 and pi.
    """
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    check_rotation(r1)
    check_rotation(r2)
    m = r1 @ r2.T
    s = math.hypot(m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1])
    return math.atan2(s, m[0, 0] + m[1, 1] + m[2, 2] - 1.0)


def normalize_trajectory(traj: Trajectory) -> Trajectory:
    """Express every frame relative to frame 0.

    Frame ``f`` becomes ``T_f @ inv(T_0)``, so frame 0 is the identity and the
    result does not depend on the choice of world frame.
    """
    r0 = traj[0].rotation
    t0 = traj[0].translation
    poses = [CameraPose.identity()]
    for p in traj.poses[1:]:
        r_rel = p.rotation @ r0.T
        poses.append(CameraPose(r_rel, p.translation - r_rel @ t0))
    return Trajectory(tuple(poses))


def pose_error(gen: Trajectory, gt: Trajectory, trans_scale: str = "none") -> PoseError:
    """Summed per-frame rotation, translation, and ``[R|t]`` errors.

    Inputs are expected to be normalized already. ``trans_scale="gt_extent"``
    divides every translation by the largest ground-truth translation norm
    before comparing; the default compares raw world units.
    """
    if gen.frame_count != gt.frame_count:
        raise LengthMismatch(f"frame counts differ: {gen.frame_count} vs {gt.frame_count}")
    if trans_scale not in ("none", "gt_extent"):
        raise ValueError(f"unknown trans_scale {trans_scale!r}")
    scale = 1.0
    if trans_scale == "gt_extent":
        ext = max(float(np.linalg.norm(p.translation)) for p in gt.poses)
        scale = 1.0 / ext if ext > 0 else 1.0
    rot = trans = mc = 0.0
    for pg, pt in zip(gen.poses, gt.poses):
        rot += geodesic_angle(pg.rotation, pt.rotation)
        dt = (pg.translation - pt.translation) * scale
        trans += float(np.linalg.norm(dt))
        dm = np.concatenate([pg.rotation - pt.rotation, dt[:, None]], axis=1)
        mc += float(np.linalg.norm(dm))
    return PoseError(math.degrees(rot), trans, mc)


# --- file format ----------------------------------------------------------
#
# {"format": "trajectory", "version": 1, "frames": [[r00, r01, r02, t0,
#   r10, r11, r12, t1, r20, r21, r22, t2], ...]}
# One row per frame, row-major [R|t], every number printed with 17
# significant digits so a read gives back the same float64 bits.

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps_trajectory(traj: Trajectory) -> str:
    rows = []
    for m in traj.matrices():
        rows.append("    [" + ", ".join(_fmt(v) for v in m.reshape(12)) + "]")
    return (
        '{\n  "format": "trajectory",\n  "version": %d,\n  "frames": [\n%s\n  ]\n}\n'
        % (TRAJECTORY_FORMAT_VERSION, ",\n".join(rows))
    )


def loads_trajectory(text: str) -> Trajectory:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"trajectory file is not valid JSON: {exc}") from exc
    if doc.get("format") != "trajectory":
        raise FormatError("missing 'format': 'trajectory' tag")
    if doc.get("version") != TRAJECTORY_FORMAT_VERSION:
        raise FormatError(f"unsupported trajectory version {doc.get('version')!r}")
    frames = doc.get("frames")
    if not isinstance(frames, list) or any(len(r) != 12 for r in frames):
        raise FormatError("'frames' must be a list of 12-element rows")
    return Trajectory.from_matrices(np.array(frames, dtype=np.float64))


def save_trajectory(traj: Trajectory, path) -> None:
    Path(path).write_text(dumps_trajectory(traj))


def load_trajectory(path) -> Trajectory:
    return loads_trajectory(Path(path).read_text())


def static_trajectory(pose: CameraPose, frames: int) -> Trajectory:
    return Trajectory(tuple([pose] * frames))


def compose(poses: Iterable[CameraPose], g: np.ndarray) -> list[CameraPose]:
    """Change the world frame by the rigid 4x4 transform ``g`` (world' = g world)."""
    g = np.asarray(g, dtype=np.float64)
    gi = np.linalg.inv(g)
    out = []
    for p in poses:
        m = np.vstack([p.matrix, [0.0, 0.0, 0.0, 1.0]]) @ gi
        out.append(CameraPose(m[:3, :3], m[:3, 3]))
    return out


def stack_rows(poses: Sequence[CameraPose]) -> np.ndarray:
    """Flatten each pose to the 12-vector row-major ``[R|t]``; shape ``(f, 12)``."""
    return np.stack([p.matrix.reshape(12) for p in poses])
