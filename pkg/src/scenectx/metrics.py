"""PSNR, SSIM and an evaluation report over generated vs reference videos."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .errors import LengthMismatch, ShapeMismatch
from .geometry import PoseError, Trajectory, normalize_trajectory, pose_error

LUMA = np.array([0.299, 0.587, 0.114])
C1 = 0.01 ** 2
C2 = 0.03 ** 2
WINDOW = 8


def _as_video(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 3 and a.shape[-1] == 3:
        a = a[None]
    if a.ndim != 4 or a.shape[-1] != 3:
        raise ShapeMismatch(f"expected (f, h, w, 3) video, got {a.shape}")
    return a


def _check(a, b):
    a, b = _as_video(a), _as_video(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr_frames(a, b) -> np.ndarray:
    """Per-frame PSNR in dB for unit-range inputs; identical frames give ``inf``."""
    a, b = _check(a, b)
    mse = np.mean((a - b) ** 2, axis=(1, 2, 3))
    with np.errstate(divide="ignore"):
        return np.where(mse == 0.0, np.inf, 10.0 * np.log10(1.0 / np.where(mse == 0.0, 1.0, mse)))


def psnr(a, b, mode: str = "frames") -> float:
    """Mean of per-frame PSNR (``mode="frames"``) or PSNR of the global MSE (``"global"``).

    Returns ``math.inf`` when every frame matches exactly.
    """
    if mode == "global":
        a, b = _check(a, b)
        mse = float(np.mean((a - b) ** 2))
        return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    if mode != "frames":
        raise ValueError(f"unknown psnr mode {mode!r}")
    per = psnr_frames(a, b)
    return math.inf if np.all(np.isinf(per)) else float(np.mean(per))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _valid_filter(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable correlation over the last two axes, keeping 'valid' positions only."""
    n = len(taps)
    out = img
    for ax in (-2, -1):
        out = correlate1d(out, taps, axis=ax, mode="constant", origin=-(n // 2) if n % 2 == 0 else 0)
    h, w = img.shape[-2:]
    if n % 2 == 0:
        return out[..., : h - n + 1, : w - n + 1]
    r = n // 2
    return out[..., r: h - r, r: w - r]


def ssim_map(a, b, gaussian: bool = False) -> np.ndarray:
    """SSIM values per frame and window position on luma, shape (f, h', w')."""
    a, b = _check(a, b)
    x, y = a @ LUMA, b @ LUMA
    taps = _gaussian_window() if gaussian else np.full(WINDOW, 1.0 / WINDOW)
    if min(x.shape[1:]) < len(taps):
        raise ShapeMismatch(f"frames smaller than the {len(taps)}x{len(taps)} SSIM window")
    mx, my = _valid_filter(x, taps), _valid_filter(y, taps)
    sxx = _valid_filter(x * x, taps) - mx * mx
    syy = _valid_filter(y * y, taps) - my * my
    sxy = _valid_filter(x * y, taps) - mx * my
    num = (2 * mx * my + C1) * (2 * sxy + C2)
    den = (mx * mx + my * my + C1) * (sxx + syy + C2)
    return num / den


def ssim(a, b, gaussian: bool = False) -> float:
    """Mean SSIM over windows and frames (8x8 uniform window, population statistics).

    ``gaussian=True`` switches to the 11x11, sigma 1.5 Gaussian window.
    """
    return float(np.mean(ssim_map(a, b, gaussian)))


@dataclass
class EvalReport:
    psnr: float
    ssim: float
    psnr_per_frame: list
    ssim_per_frame: list
    psnr_global: float
    pose: PoseError | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        enc = lambda v: "inf" if v == math.inf else v  # noqa: E731
        return {
            "format": "eval_report",
            "version": 1,
            "psnr": enc(self.psnr),
            "psnr_global": enc(self.psnr_global),
            "ssim": self.ssim,
            "per_frame": {"psnr": [enc(v) for v in self.psnr_per_frame], "ssim": self.ssim_per_frame},
            "pose": None if self.pose is None else self.pose.as_dict(),
            "extra": self.extra,
        }

    def dumps(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        dec = lambda v: math.inf if v == "inf" else v  # noqa: E731
        pose = None
        if d.get("pose") is not None:
            p = d["pose"]
            pose = PoseError(p["rot_err"], p["trans_err"], p["cam_mc"])
        return cls(dec(d["psnr"]), d["ssim"], [dec(v) for v in d["per_frame"]["psnr"]],
                   d["per_frame"]["ssim"], dec(d["psnr_global"]), pose, d.get("extra", {}))


def evaluate(generated, reference, gen_traj: Trajectory | None = None,
             ref_traj: Trajectory | None = None, gaussian: bool = False) -> EvalReport:
    g, r = _check(generated, reference)
    per_psnr = psnr_frames(g, r)
    per_ssim = [float(v) for v in ssim_map(g, r, gaussian).mean(axis=(1, 2))]
    pose = None
    if (gen_traj is None) != (ref_traj is None):
        raise LengthMismatch("pass both trajectories or neither")
    if gen_traj is not None:
        pose = pose_error(normalize_trajectory(gen_traj), normalize_trajectory(ref_traj))
    return EvalReport(psnr(g, r), ssim(g, r, gaussian), [float(v) for v in per_psnr], per_ssim,
                      psnr(g, r, "global"), pose)
