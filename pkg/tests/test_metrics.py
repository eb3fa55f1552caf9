import math

import numpy as np
import pytest

from scenectx.errors import ShapeMismatch
from scenectx.geometry import look_at, pose_from_yaw_pitch, static_trajectory
from scenectx.metrics import C1, C2, LUMA, EvalReport, evaluate, psnr, ssim
from scenectx.render import render_frame
from scenectx.scene import build_scene


def psnr_oracle(a, b):
    vals = []
    for f in range(a.shape[0]):
        s, n = 0.0, 0
        for i in range(a.shape[1]):
            for j in range(a.shape[2]):
                for c in range(3):
                    d = float(a[f, i, j, c]) - float(b[f, i, j, c])
                    s += d * d
                    n += 1
        vals.append(10.0 * math.log10(1.0 / (s / n)))
    return sum(vals) / len(vals)


def ssim_oracle(a, b, win=8):
    total, count = 0.0, 0
    for f in range(a.shape[0]):
        x = [[sum(float(a[f, i, j, c]) * LUMA[c] for c in range(3)) for j in range(a.shape[2])] for i in range(a.shape[1])]
        y = [[sum(float(b[f, i, j, c]) * LUMA[c] for c in range(3)) for j in range(a.shape[2])] for i in range(a.shape[1])]
        for i in range(a.shape[1] - win + 1):
            for j in range(a.shape[2] - win + 1):
                xs = [x[i + u][j + v] for u in range(win) for v in range(win)]
                ys = [y[i + u][j + v] for u in range(win) for v in range(win)]
                n = len(xs)
                mx, my = sum(xs) / n, sum(ys) / n
                vx = sum((p - mx) ** 2 for p in xs) / n
                vy = sum((q - my) ** 2 for q in ys) / n
                cov = sum((p - mx) * (q - my) for p, q in zip(xs, ys)) / n
                total += ((2 * mx * my + C1) * (2 * cov + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))
                count += 1
    return total / count


def rand_pair(seed, shape=(2, 16, 16, 3)):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, shape)
    return a, np.clip(a + rng.normal(0, 0.1, shape), 0, 1)


class TestPsnr:
    def test_identical_is_inf(self):
        a = np.random.default_rng(0).uniform(0, 1, (3, 8, 8, 3))
        assert psnr(a, a) == math.inf
        assert psnr(a, a, "global") == math.inf

    def test_twenty_db(self):
        a = np.full((2, 4, 4, 3), 0.5)
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-12)

    def test_oracle(self):
        a, b = rand_pair(1)
        assert abs(psnr(a, b) - psnr_oracle(a, b)) < 1e-9

    def test_symmetric_and_frame_order(self):
        a, b = rand_pair(2, (4, 8, 8, 3))
        assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)
        p = [2, 0, 3, 1]
        assert psnr(a[p], b[p]) == pytest.approx(psnr(a, b), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            psnr(np.zeros((1, 4, 4, 3)), np.zeros((1, 4, 5, 3)))


class TestSsim:
    def test_self_is_one(self):
        a, _ = rand_pair(3)
        assert ssim(a, a) == 1.0

    def test_constant_closed_form(self):
        a, b = np.zeros((1, 8, 8, 3)), np.ones((1, 8, 8, 3))
        assert ssim(a, b) == pytest.approx(C1 * C2 / ((1 + C1) * C2), rel=1e-12)

    def test_oracle_64(self):
        a, b = rand_pair(4, (1, 64, 64, 3))
        assert abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-9

    def test_bounds_and_symmetry(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            a = rng.uniform(0, 1, (1, 8, 8, 3))
            b = rng.uniform(0, 1, (1, 8, 8, 3))
            s = ssim(a, b)
            assert -1.0 <= s <= 1.0
            assert s == pytest.approx(ssim(b, a), abs=1e-12)

    def test_shift_lowers_ssim(self):
        img, _ = render_frame(build_scene(0), look_at((0, 3, 4), (0, 1, 0)), 0, True, 64, 64)
        shifted = np.roll(img, 4, axis=1)
        assert ssim(img[None], shifted[None]) < 1.0

    def test_gaussian_flag(self):
        a, b = rand_pair(6, (1, 24, 24, 3))
        assert ssim(a, a, gaussian=True) == 1.0
        assert ssim(a, b, gaussian=True) != ssim(a, b)


class TestEvaluate:
    def test_self(self):
        a, _ = rand_pair(7)
        t = static_trajectory(pose_from_yaw_pitch((0, 1, 0), 10.0), 2)
        r = evaluate(a, a, t, t)
        assert r.psnr == math.inf and r.ssim == 1.0
        assert (r.pose.rot_err, r.pose.trans_err, r.pose.cam_mc) == (0.0, 0.0, 0.0)

    def test_report_round_trip(self):
        a, b = rand_pair(8)
        text = evaluate(a, b).dumps()
        assert EvalReport.loads(text).dumps() == text
        t = evaluate(a, a).dumps()
        assert '"psnr": "inf"' in t and EvalReport.loads(t).dumps() == t

    def test_noise_lowers_psnr(self):
        a, _ = rand_pair(9)
        noisy = np.clip(a + np.random.default_rng(1).normal(0, 0.05, a.shape), 0, 1)
        assert evaluate(a, noisy).psnr < evaluate(a, a).psnr
