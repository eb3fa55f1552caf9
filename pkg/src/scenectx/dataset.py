"""Paired-video samples and the on-disk dataset layout.

Layout::

    out_dir/manifest.json
    out_dir/samples/000000/video_with.rten      frames (f, h, w, 3) float32
                          video_without.rten
                          masks.png             1-bit, frames stacked vertically
                          panorama.rten         (H, 2H, 3) float32
                          panorama.png          8-bit preview
                          trajectory.json
                          meta.json

``manifest.json`` fields: ``format_version`` (int), ``config`` (the build
config), ``samples`` (list). Each sample entry holds ``index``, ``dir``,
``files`` (relative paths keyed by role), ``scene_seed``, ``movement_seed``,
``movement`` (kind, direction, magnitude, frames), ``prompt_tag``,
``start_yaw`` and ``panorama_eye``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .geometry import Trajectory, load_trajectory, save_trajectory
from .imageio import load_tensor, read_mask_png, save_tensor, write_mask_png, write_png
from .panorama import Panorama
from .render import render_panorama, render_video
from .scene import SceneSpec, build_scene
from .trajectory import DEFAULT_FRAMES, MovementSpec, sample_movement

FORMAT_VERSION = 1

FILES = {
    "video_with": "video_with.rten",
    "video_without": "video_without.rten",
    "masks": "masks.png",
    "panorama": "panorama.rten",
    "panorama_preview": "panorama.png",
    "trajectory": "trajectory.json",
    "meta": "meta.json",
}


@dataclass(frozen=True, eq=False)
class SamplePair:
    video_with_subject: np.ndarray
    video_without_subject: np.ndarray
    subject_masks: np.ndarray
    panorama: Panorama
    trajectory: Trajectory
    movement: MovementSpec
    prompt_tag: int
    scene_seed: int
    movement_seed: int = 0
    scene: SceneSpec | None = field(default=None, repr=False)

    @property
    def start_yaw(self) -> float:
        return self.trajectory[0].yaw_pitch()[0]

    @property
    def panorama_eye(self) -> np.ndarray:
        return self.trajectory[0].eye

    def invariant_violations(self) -> list[str]:
        """Names of SamplePair invariants that fail (empty when all hold)."""
        bad = []
        outside = ~self.subject_masks
        if not np.array_equal(self.video_with_subject[outside], self.video_without_subject[outside]):
            bad.append("background differs outside subject mask")
        f = self.trajectory.frame_count
        if self.video_with_subject.shape[0] != f or self.subject_masks.shape[0] != f:
            bad.append("frame count differs from trajectory")
        if self.panorama.width != 2 * self.panorama.height:
            bad.append("panorama is not 2:1")
        return bad


def default_pano_h(h: int) -> int:
    return max(128, 4 * h)


def make_sample_pair(scene_seed: int, movement_seed: int, frames: int = DEFAULT_FRAMES,
                     w: int = 64, h: int = 64, pano_h: int | None = None,
                     shadows: bool = False) -> SamplePair:
    """Build a scene, sample a movement around its subject and render everything."""
    scene = build_scene(scene_seed)
    subj = scene.subject
    movement, traj = sample_movement(movement_seed, subj.aim_point, subj.facing, frames=frames)
    with_subj, masks = render_video(scene, traj, True, w, h, shadows=shadows)
    without, _ = render_video(scene, traj, False, w, h, shadows=shadows)
    pano = render_panorama(scene, traj[0].eye, pano_h or default_pano_h(h), shadows=shadows)
    return SamplePair(with_subj, without, masks, pano, traj, movement, subj.prompt_tag,
                      scene_seed, movement_seed, scene)


@dataclass(frozen=True)
class DatasetConfig:
    pairs: int = 64
    scenes: int = 8
    seed: int = 0
    frames: int = DEFAULT_FRAMES
    width: int = 64
    height: int = 64
    pano_h: int = 0  # 0 picks default_pano_h(height)

    def seeds(self, index: int) -> tuple[int, int]:
        return self.seed * 100_003 + index % self.scenes, self.seed * 1_000_003 + index

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _sample_meta(pair: SamplePair, index: int, rel: str) -> dict:
    return {
        "index": index,
        "dir": rel,
        "files": {k: f"{rel}/{v}" for k, v in FILES.items()},
        "scene_seed": int(pair.scene_seed),
        "movement_seed": int(pair.movement_seed),
        "movement": pair.movement.metadata(),
        "prompt_tag": int(pair.prompt_tag),
        "start_yaw": float(pair.start_yaw),
        "panorama_eye": [float(x) for x in pair.panorama_eye],
    }


def write_sample(pair: SamplePair, out_dir, index: int) -> dict:
    rel = f"samples/{index:06d}"
    d = os.path.join(out_dir, rel)
    os.makedirs(d, exist_ok=True)
    save_tensor(os.path.join(d, FILES["video_with"]), pair.video_with_subject)
    save_tensor(os.path.join(d, FILES["video_without"]), pair.video_without_subject)
    write_mask_png(os.path.join(d, FILES["masks"]), pair.subject_masks)
    save_tensor(os.path.join(d, FILES["panorama"]), pair.panorama.pixels)
    write_png(os.path.join(d, FILES["panorama_preview"]), pair.panorama.pixels)
    save_trajectory(pair.trajectory, os.path.join(d, FILES["trajectory"]))
    meta = _sample_meta(pair, index, rel)
    with open(os.path.join(d, FILES["meta"]), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return meta


def build_dataset(config: DatasetConfig, out_dir, log=None) -> dict:
    """Render ``config.pairs`` samples into ``out_dir`` and write the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(config.pairs):
        scene_seed, movement_seed = config.seeds(i)
        pair = make_sample_pair(scene_seed, movement_seed, config.frames, config.width,
                                config.height, config.pano_h or None)
        entries.append(write_sample(pair, out_dir, i))
        if log is not None:
            log(f"sample {i + 1}/{config.pairs}: {pair.movement.kind} {pair.movement.direction}")
    manifest = {"format_version": FORMAT_VERSION, "config": config.as_dict(), "samples": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_manifest(out_dir) -> dict:
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported manifest version {manifest.get('format_version')!r}")
    return manifest


@dataclass(frozen=True, eq=False)
class LoadedSample:
    video_with_subject: np.ndarray
    video_without_subject: np.ndarray
    subject_masks: np.ndarray
    panorama: Panorama
    trajectory: Trajectory
    meta: dict


def load_sample(out_dir, entry: dict) -> LoadedSample:
    f = entry["files"]
    p = lambda k: os.path.join(out_dir, f[k])  # noqa: E731
    video = load_tensor(p("video_with"))
    return LoadedSample(
        video,
        load_tensor(p("video_without")),
        read_mask_png(p("masks"), video.shape[0]),
        Panorama(load_tensor(p("panorama"))),
        load_trajectory(p("trajectory")),
        entry,
    )
