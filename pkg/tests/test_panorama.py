import math

import numpy as np
import pytest

from scenectx.errors import BadFov, EmptyOutput, ShapeMismatch
from scenectx.geometry import direction_from_yaw_pitch, pose_from_yaw_pitch
from scenectx.panorama import (
    Panorama,
    downscale2,
    equirect_to_perspective,
    perspective_to_equirect_accumulate,
    rotate_panorama,
    scene_context_from_panorama,
    texel_lonlat,
)


def smooth_panorama(h):
    lon, lat = texel_lonlat(h)
    r = 0.5 + 0.3 * np.cos(lat) * np.sin(lon)
    g = 0.5 + 0.25 * np.sin(2 * lat) + 0.1 * np.cos(lon)
    b = 0.4 + 0.2 * np.cos(lat) ** 2 * np.cos(2 * lon)
    return Panorama(np.stack([r, g, b], axis=-1))


def oracle_view(pix, yaw, pitch, fov, w, h):
    """Per-pixel spherical-trig mapping with its own bilinear sampler."""
    H, W = pix.shape[:2]
    psi, phi = math.radians(yaw), math.radians(pitch)
    fwd = (math.sin(psi) * math.cos(phi), math.sin(phi), -math.cos(psi) * math.cos(phi))
    right = (math.cos(psi), 0.0, math.sin(psi))
    up = (-math.sin(psi) * math.sin(phi), math.cos(phi), math.cos(psi) * math.sin(phi))
    half = math.tan(math.radians(fov) / 2)
    out = np.zeros((h, w, 3))
    for i in range(h):
        for j in range(w):
            x = (2 * (j + 0.5) / w - 1) * half
            y = (1 - 2 * (i + 0.5) / h) * half * h / w
            ray = [fwd[k] + x * right[k] + y * up[k] for k in range(3)]
            n = math.sqrt(sum(c * c for c in ray))
            lat = math.asin(ray[1] / n)
            lon = math.atan2(ray[0], -ray[2])
            u = (lon / (2 * math.pi) + 0.5) * W - 0.5
            v = (0.5 - lat / math.pi) * H - 0.5
            x0, y0 = math.floor(u), math.floor(v)
            a, b = u - x0, v - y0
            xs = (x0 % W, (x0 + 1) % W)
            ys = (min(max(y0, 0), H - 1), min(max(y0 + 1, 0), H - 1))
            for c in range(3):
                out[i, j, c] = (
                    (1 - a) * (1 - b) * pix[ys[0], xs[0], c]
                    + a * (1 - b) * pix[ys[0], xs[1], c]
                    + (1 - a) * b * pix[ys[1], xs[0], c]
                    + a * b * pix[ys[1], xs[1], c]
                )
    return out


class TestEquirectToPerspective:
    def test_constant_panorama_is_bit_exact(self):
        pano = Panorama(np.full((32, 64, 3), 0.3719))
        view = equirect_to_perspective(pano, 33.0, -12.0, 75.0, 17, 11)
        assert np.all(view.pixels == 0.3719)

    @pytest.mark.parametrize("yaw", [-120.0, 0.0, 18.0, 97.5])
    def test_center_pixel_samples_view_longitude(self, yaw):
        h = 64
        ramp = (np.arange(2 * h) + 0.5) / (2 * h)
        pano = Panorama(np.broadcast_to(ramp[None, :, None], (h, 2 * h, 3)).copy())
        view = equirect_to_perspective(pano, yaw, 0.0, 90.0, 9, 9)
        lon = math.degrees(view.pixels[4, 4, 0] * 2 * math.pi - math.pi)
        assert lon == pytest.approx(yaw, abs=1e-9)

    @pytest.mark.parametrize("yaw,pitch,fov", [(0, 0, 90), (47, 12, 60), (-170, -35, 110), (181, 80, 90)])
    def test_matches_spherical_oracle(self, yaw, pitch, fov):
        pix = np.random.default_rng(7).random((24, 48, 3))
        view = equirect_to_perspective(Panorama(pix), yaw, pitch, fov, 8, 8)
        assert np.max(np.abs(view.pixels - oracle_view(pix, yaw, pitch, fov, 8, 8))) < 1e-6

    def test_non_square_matches_oracle(self):
        pix = np.random.default_rng(8).random((24, 48, 3))
        view = equirect_to_perspective(Panorama(pix), 10, 5, 90, 12, 7)
        assert np.max(np.abs(view.pixels - oracle_view(pix, 10, 5, 90, 12, 7))) < 1e-6

    def test_errors(self):
        pano = Panorama(np.zeros((8, 16, 3)))
        for fov in (0.0, 180.0, -5.0, float("nan")):
            with pytest.raises(BadFov):
                equirect_to_perspective(pano, 0, 0, fov, 8, 8)
        with pytest.raises(EmptyOutput):
            equirect_to_perspective(pano, 0, 0, 90, 0, 8)

    def test_panorama_shape_checked(self):
        with pytest.raises(ShapeMismatch):
            Panorama(np.zeros((8, 15, 3)))

    def test_horizontal_wrap(self):
        pano = Panorama(np.random.default_rng(1).random((32, 64, 3)))
        a = equirect_to_perspective(pano, 21.0, 4.0, 90.0, 16, 16)
        b = equirect_to_perspective(pano, 21.0 + 360.0, 4.0, 90.0, 16, 16)
        assert np.max(np.abs(a.pixels - b.pixels)) < 1e-12

    def test_yaw_equivariance(self):
        pano = smooth_panorama(128)
        rotated = rotate_panorama(pano, 45.0)
        for a in (0.0, 30.0, -100.0):
            v1 = equirect_to_perspective(pano, a, 0.0, 90.0, 32, 32)
            v2 = equirect_to_perspective(rotated, a - 45.0, 0.0, 90.0, 32, 32)
            assert np.max(np.abs(v1.pixels - v2.pixels)) < 2 / 255

    def test_yaw_equivariance_fractional_shift(self):
        pano = smooth_panorama(128)
        rotated = rotate_panorama(pano, 10.3)
        v1 = equirect_to_perspective(pano, 50.0, 0.0, 90.0, 32, 32)
        v2 = equirect_to_perspective(rotated, 50.0 - 10.3, 0.0, 90.0, 32, 32)
        assert np.max(np.abs(v1.pixels - v2.pixels)) < 2 / 255

    def test_downscale_commutes(self):
        pano = smooth_panorama(256)
        small = Panorama(downscale2(pano.pixels))
        big_view = equirect_to_perspective(pano, 12.0, 0.0, 90.0, 64, 64).pixels
        small_view = equirect_to_perspective(small, 12.0, 0.0, 90.0, 32, 32).pixels
        assert np.mean(np.abs(downscale2(big_view) - small_view)) < 4 / 255

    def test_dimensions_and_finite(self):
        rng = np.random.default_rng(5)
        pano = Panorama(rng.random((16, 32, 3)) * 1e6)
        for _ in range(20):
            w, h = rng.integers(1, 20, size=2)
            v = equirect_to_perspective(pano, rng.uniform(-720, 720), rng.uniform(-90, 90),
                                        rng.uniform(1, 179), int(w), int(h))
            assert v.pixels.shape == (h, w, 3)
            assert np.all(np.isfinite(v.pixels))

    def test_straight_up_and_down(self):
        pano = Panorama(np.random.default_rng(2).random((16, 32, 3)))
        for pitch in (90.0, -90.0):
            assert np.all(np.isfinite(equirect_to_perspective(pano, 0, pitch, 90, 8, 8).pixels))

    def test_consistent_with_geometry_yaw(self):
        # the view axis of a yaw view is the geometry module's forward axis
        for yaw in (0.0, 40.0, -75.0):
            pose = pose_from_yaw_pitch((0, 0, 0), yaw, 0.0)
            np.testing.assert_allclose(pose.forward, direction_from_yaw_pitch(yaw), atol=1e-15)
            lon = math.degrees(math.atan2(pose.forward[0], -pose.forward[2]))
            assert lon == pytest.approx(yaw)


class TestSceneContext:
    def test_twenty_views_at_18_degrees(self):
        ctx = scene_context_from_panorama(smooth_panorama(32), 0.0, 20, 8, 8)
        assert [v.yaw for v in ctx.views] == [18.0 * i for i in range(20)]
        assert all(v.pitch == 0.0 and v.fov == 90.0 for v in ctx.views)

    def test_single_view(self):
        ctx = scene_context_from_panorama(smooth_panorama(32), 33.0, 1, 8, 8)
        assert len(ctx) == 1 and ctx[0].yaw == 33.0 and ctx[0].fov == 90.0

    def test_four_views_offset(self):
        ctx = scene_context_from_panorama(smooth_panorama(32), 45.0, 4, 8, 8)
        assert [v.yaw for v in ctx.views] == [45.0, 135.0, 225.0, 315.0]

    def test_bad_count(self):
        with pytest.raises(EmptyOutput):
            scene_context_from_panorama(smooth_panorama(32), 0.0, 0)


def coverage_oracle(views, pano_h):
    lon, lat = texel_lonlat(pano_h)
    covered = np.zeros(lon.shape, dtype=bool)
    for v in views:
        psi = math.radians(v.yaw)
        # angle between texel direction and view axis, decomposed explicitly
        d = np.stack([np.sin(lon) * np.cos(lat), np.sin(lat), -np.cos(lon) * np.cos(lat)], -1)
        fwd = np.array([math.sin(psi), 0.0, -math.cos(psi)])
        right = np.array([math.cos(psi), 0.0, math.sin(psi)])
        depth = d @ fwd
        with np.errstate(divide="ignore", invalid="ignore"):
            x = (d @ right) / depth
            y = d[..., 1] / depth
        covered |= (depth > 0) & (np.abs(x) <= 1.0) & (np.abs(y) <= v.height / v.width)
    return covered


class TestAccumulate:
    def test_twenty_views_cover_band(self):
        ctx = scene_context_from_panorama(smooth_panorama(64), 0.0, 20, 16, 16)
        _, cov = perspective_to_equirect_accumulate(ctx, 64)
        lon, lat = texel_lonlat(64)
        band = np.abs(np.degrees(lat)) < 30
        assert cov[band].all()
        assert coverage_oracle(ctx.views, 64)[band].all()

    def test_single_view_footprint(self):
        ctx = scene_context_from_panorama(smooth_panorama(64), 0.0, 1, 16, 16)
        _, cov = perspective_to_equirect_accumulate(ctx, 64)
        oracle = coverage_oracle(ctx.views, 64)
        assert np.array_equal(cov, oracle)
        assert 0 < cov.mean() < 0.5

    def test_round_trip_smooth(self):
        pano = smooth_panorama(128)
        ctx = scene_context_from_panorama(pano, 0.0, 20, 64, 64)
        back, cov = perspective_to_equirect_accumulate(ctx, 128)
        err = np.abs(back.pixels - pano.pixels)[cov]
        assert err.mean() < 2 / 255
