import json
import math
import os

import numpy as np
import pytest

from scenectx.dataset import DatasetConfig, build_dataset, load_manifest, load_sample, make_sample_pair
from scenectx.errors import EyeInsideGeometry
from scenectx.geometry import look_at, pose_from_yaw_pitch, static_trajectory
from scenectx.panorama import equirect_to_perspective, scene_context_from_panorama
from scenectx.render import render_frame, render_panorama, render_video
from scenectx.scene import (
    ANIMATIONS,
    GroundSpec,
    SceneObject,
    SceneSpec,
    SubjectSpec,
    animation_frames,
    build_scene,
    subject_clearance,
)
from scenectx.trajectory import KINDS, MovementSpec, pan, sample_movement

SKY = (0.5, 0.7, 0.9)


def bare_scene(objects=(), has_ground=False, subject=None, sky=SKY):
    subject = subject or SubjectSpec((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), "wave", 0, 0,
                                     leg_radius=0.0, torso_radius=0.0, head_radius=0.0)
    ground = GroundSpec((0.8, 0.8, 0.8), (0.2, 0.2, 0.2), 1.0)
    return SceneSpec(0, ground, tuple(objects), (0.3, 0.8, 0.5), 0.8, 0.25, sky, subject, has_ground)


class TestBuildScene:
    def test_deterministic(self):
        assert build_scene(11) == build_scene(11)

    def test_invariants(self):
        s = build_scene(3)
        assert len(s.objects) >= 3
        for o in s.objects:
            assert all(0.0 <= c <= 1.0 for c in o.albedo)

    def test_no_intersections_100_seeds(self):
        worst = math.inf
        for seed in range(100):
            s = build_scene(seed)
            for f in animation_frames(s.subject):
                worst = min(worst, subject_clearance(s, f))
        assert worst > 0.0

    def test_layout_variety(self):
        assert len({build_scene(seed).layout_key() for seed in range(100)}) >= 90

    def test_clearance_detects_overlap(self):
        s = bare_scene([SceneObject("sphere", (0.0, 1.0, 0.3), (0.5,), (1, 0, 0))],
                       subject=SubjectSpec((0.0, 0.0, 0.0), (0.0, 0.0, 1.0)))
        assert subject_clearance(s, 0) < 0.0
        s = bare_scene([SceneObject("box", (0.0, 1.0, 1.0), (0.5, 0.5, 0.5), (1, 0, 0))],
                       subject=SubjectSpec((0.0, 0.0, 0.0), (0.0, 0.0, 1.0)))
        # box face at z=0.5, top at y=1.5 where the torso (radius 0.35) starts
        assert subject_clearance(s, 0) == pytest.approx(0.15, abs=1e-6)

    @pytest.mark.parametrize("anim", ANIMATIONS)
    def test_subject_bounded(self, anim):
        subj = SubjectSpec((1.0, 0.0, -2.0), (0.6, 0.0, 0.8), anim, 12)
        for f in range(30):
            caps, sphs = subj.primitives(f)
            pts = [(a, r) for a, _, r, _ in caps] + [(b, r) for _, b, r, _ in caps] + [(c, r) for c, r, _ in sphs]
            for p, r in pts:
                assert math.hypot(p[0] - 1.0, p[2] + 2.0) + r <= 1.0
            np.testing.assert_array_equal(subj.primitives(f)[1][0][0], subj.primitives(f + 12)[1][0][0])


class TestRenderFrame:
    def test_empty_sky_constant(self):
        img, mask = render_frame(bare_scene(), pose_from_yaw_pitch((0, 1, 0), 30.0, 20.0), w=16, h=12)
        assert img.shape == (12, 16, 3)
        assert np.all(img == np.asarray(SKY))
        assert not mask.any()

    def test_with_without_background_bit_exact(self):
        s = build_scene(4)
        pose = look_at((0.0, 3.0, 4.0), (0.0, 1.0, 0.0))
        for f in (0, 5):
            a, m = render_frame(s, pose, f, True, 96, 64)
            b, _ = render_frame(s, pose, f, False, 96, 64)
            assert m.any()
            np.testing.assert_array_equal(a[~m], b[~m])
            assert np.any(a[m] != b[m])

    def test_sphere_silhouette(self):
        # pinhole image of a sphere seen from distance d: half width = f*tan(asin(r/d))
        w = 256
        s = bare_scene([SceneObject("sphere", (0.0, 0.0, -4.0), (1.0,), (1.0, 0.2, 0.2))])
        img, _ = render_frame(s, pose_from_yaw_pitch((0, 0, 0), 0.0), w=w, h=w)
        row = img[w // 2 - 1]
        width = int(np.sum(np.any(row != np.asarray(SKY), axis=1)))
        expected = w * math.tan(math.asin(1.0 / 4.0)) / math.tan(math.radians(45.0))
        assert abs(width - expected) <= 2.0

    def test_deterministic(self):
        s = build_scene(2)
        pose = look_at((1.0, 3.0, 4.0), (0.0, 3.0, 0.0))
        a = render_frame(s, pose, 3, True, 32, 32)
        b = render_frame(s, pose, 3, True, 32, 32)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_colors_in_unit_range(self):
        img, _ = render_frame(build_scene(5), look_at((0, 3, 4), (0, 1, 0)), 0, True, 48, 48, shadows=True)
        assert img.min() >= 0.0 and img.max() <= 1.0


class TestRenderVideo:
    def test_static_frames_identical(self):
        s = build_scene(1)
        subj = s.subject.__class__(**{**s.subject.__dict__, "period": 0})
        s = s.__class__(**{**s.__dict__, "subject": subj})
        frames, masks = render_video(s, static_trajectory(look_at((0, 3, 4), (0, 1, 0)), 4), True, 24, 24)
        for f in frames[1:]:
            np.testing.assert_array_equal(f, frames[0])

    def test_pan_changes_every_frame(self):
        s = build_scene(6)
        start = look_at((0.0, 3.0, 4.0), (0.0, 3.0, 0.0))
        traj = pan(MovementSpec("pan", "right", 75.0, 12, None, start))
        frames, _ = render_video(s, traj, True, 32, 32)
        diffs = np.abs(np.diff(frames, axis=0)).mean(axis=(1, 2, 3))
        assert np.all(diffs > 0.0)


class TestRenderPanorama:
    def test_sky_only_constant(self):
        p = render_panorama(bare_scene(), (0, 0, 0), 16)
        assert p.width == 32 and p.height == 16
        assert np.all(p.pixels == np.asarray(SKY))

    def test_eye_inside(self):
        s = bare_scene([SceneObject("box", (0, 0, 0), (1, 1, 1), (1, 1, 1))])
        with pytest.raises(EyeInsideGeometry):
            render_panorama(s, (0.2, 0.1, 0.0), 8)

    @pytest.mark.parametrize("seed,yaw", [(0, 0.0), (3, 130.0)])
    def test_matches_direct_render(self, seed, yaw):
        s = build_scene(seed)
        eye = np.array([0.5, 3.0, 4.0])
        pano = render_panorama(s, eye, 512)
        direct, _ = render_frame(s, pose_from_yaw_pitch(eye, yaw), 0, False, 256, 256)
        view = equirect_to_perspective(pano, yaw, 0.0, 90.0, 256, 256)
        assert np.abs(view.pixels - direct).mean() < 3.0 / 255.0


def test_subject_visible_for_arc_and_dolly():
    seen, shown = 0, []
    for seed in range(400):
        scene = build_scene(seed)
        subj = scene.subject
        spec, traj = sample_movement(seed, subj.aim_point, subj.facing, frames=17)
        if spec.kind not in ("arc_horizontal", "arc_vertical", "dolly"):
            continue
        _, masks = render_video(scene, traj, True, 32, 32)
        shown.extend(masks.any(axis=(1, 2)))
        seen += 1
        if seen == 60:
            break
    assert np.mean(shown) >= 0.95


class TestSamplePair:
    def test_pair_invariants_and_view0(self):
        for i in range(4):
            p = make_sample_pair(i, 50 + i, frames=9, w=32, h=32)
            assert p.invariant_violations() == []
            np.testing.assert_array_equal(p.panorama_eye, p.trajectory[0].eye)
            ctx = scene_context_from_panorama(p.panorama, p.start_yaw, 20, 32, 32)
            assert np.abs(ctx.views[0].pixels - p.video_without_subject[0]).mean() < 3.0 / 255.0
            assert 0 <= p.prompt_tag < 16

    def test_kind_coverage(self):
        kinds = {make_sample_pair(i % 8, i, frames=2, w=4, h=4, pano_h=4).movement.kind for i in range(700)}
        assert kinds == set(KINDS)


class TestBuildDataset:
    def test_byte_identical_reruns(self, tmp_path):
        cfg = DatasetConfig(pairs=4, scenes=2, seed=7, frames=5, width=16, height=16)
        a, b = tmp_path / "a", tmp_path / "b"
        build_dataset(cfg, a)
        build_dataset(cfg, b)
        files = sorted(os.path.relpath(os.path.join(r, f), a) for r, _, fs in os.walk(a) for f in fs)
        assert files == sorted(os.path.relpath(os.path.join(r, f), b) for r, _, fs in os.walk(b) for f in fs)
        for f in files:
            assert (a / f).read_bytes() == (b / f).read_bytes()
        m = load_manifest(a)
        assert len(m["samples"]) == 4
        for entry in m["samples"]:
            for rel in entry["files"].values():
                assert (a / rel).exists()
            s = load_sample(a, entry)
            np.testing.assert_array_equal(s.video_with_subject[~s.subject_masks],
                                          s.video_without_subject[~s.subject_masks])
            assert json.loads((a / entry["files"]["meta"]).read_text())["prompt_tag"] == entry["prompt_tag"]
