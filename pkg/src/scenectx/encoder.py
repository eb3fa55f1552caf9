"""Implicit 3D scene features for the context views and their projection to tokens.

A backend turns a :class:`~scenectx.panorama.SceneContextSet` into per-view
spatial image features ``F_i`` (V, k, D) and one camera token ``F_c``
(V, 1, D) per view. The features are fused by broadcasting the camera token
over the spatial positions, then resized, patchified and layer-normalized
into the model's token grid.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ShapeMismatch
from .geometry import camera_rays, view_to_world
from .imageio import load_tensors, save_tensors
from .panorama import SceneContextSet

DEFAULT_DIM = 64
DEFAULT_GRID = (4, 4)
LN_EPS = 1e-5


@dataclass(frozen=True, eq=False)
class ImplicitFeatures:
    image_features: np.ndarray   # (V, k, D)
    camera_features: np.ndarray  # (V, 1, D)
    grid_h: int
    grid_w: int

    def __post_init__(self):
        fi, fc = self.image_features, self.camera_features
        if fi.ndim != 3 or fc.ndim != 3 or fc.shape[1] != 1:
            raise ShapeMismatch(f"expected (V,k,D) and (V,1,D), got {fi.shape} and {fc.shape}")
        if fi.shape[0] != fc.shape[0] or fi.shape[2] != fc.shape[2]:
            raise ShapeMismatch(f"view/dim mismatch: {fi.shape} vs {fc.shape}")
        if fi.shape[1] != self.grid_h * self.grid_w:
            raise ShapeMismatch(f"k={fi.shape[1]} != {self.grid_h}x{self.grid_w}")
        if not (np.all(np.isfinite(fi)) and np.all(np.isfinite(fc))):
            raise ValueError("implicit features contain NaN or Inf")

    @property
    def views(self) -> int:
        return self.image_features.shape[0]

    @property
    def dim(self) -> int:
        return self.image_features.shape[2]

    def permuted(self, perm) -> "ImplicitFeatures":
        perm = np.asarray(perm)
        return ImplicitFeatures(self.image_features[perm], self.camera_features[perm],
                                self.grid_h, self.grid_w)


class EncoderBackend(abc.ABC):
    """Anything that maps context views to :class:`ImplicitFeatures`."""

    name: str = "abstract"
    dim: int = 0

    @abc.abstractmethod
    def encode(self, views: SceneContextSet) -> ImplicitFeatures:
        ...


def _cell_means(pixels: np.ndarray, gh: int, gw: int) -> np.ndarray:
    """Area means over a gh x gw partition (cell edges rounded to pixels)."""
    h, w = pixels.shape[:2]
    ys = np.linspace(0, h, gh + 1).round().astype(int)
    xs = np.linspace(0, w, gw + 1).round().astype(int)
    out = np.empty((gh, gw, pixels.shape[2]))
    for i in range(gh):
        for j in range(gw):
            cell = pixels[ys[i]:max(ys[i + 1], ys[i] + 1), xs[j]:max(xs[j + 1], xs[j] + 1)]
            out[i, j] = cell.reshape(-1, pixels.shape[2]).mean(axis=0)
    return out


class ToyEncoder(EncoderBackend):
    """Frozen random linear map over colour, ray direction and viewpoint.

    Each cell input is ``[mean RGB, cell-centre ray (camera frame), sin yaw,
    cos yaw]``; the camera token input is ``[0, 0, 0, view forward (world),
    sin yaw, cos yaw]``.
    """

    name = "toy"

    def __init__(self, dim: int = DEFAULT_DIM, grid: tuple = DEFAULT_GRID, seed: int = 0):
        self.dim = int(dim)
        self.grid = (int(grid[0]), int(grid[1]))
        rng = np.random.default_rng([seed, 0x1E7C])
        self.weight = rng.normal(0.0, 1.0 / math.sqrt(8.0), size=(8, self.dim))

    def encode(self, views: SceneContextSet) -> ImplicitFeatures:
        if len(views) == 0:
            raise ShapeMismatch("cannot encode an empty context set")
        gh, gw = self.grid
        fov = views[0].fov
        rays = camera_rays(gw, gh, fov).reshape(-1, 3)
        rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)
        img, cam = [], []
        for v in views:
            rgb = _cell_means(v.pixels, gh, gw).reshape(-1, 3)
            yaw = math.radians(v.yaw)
            sc = np.broadcast_to([math.sin(yaw), math.cos(yaw)], (gh * gw, 2))
            img.append(np.concatenate([rgb, rays, sc], axis=1) @ self.weight)
            fwd = view_to_world(v.yaw, v.pitch) @ np.array([0.0, 0.0, -1.0])
            cam.append(np.concatenate([[0.0, 0.0, 0.0], fwd, [math.sin(yaw), math.cos(yaw)]]) @ self.weight)
        return ImplicitFeatures(np.stack(img), np.stack(cam)[:, None, :], gh, gw)


def toy_encode(views: SceneContextSet, d: int = DEFAULT_DIM, grid: tuple = DEFAULT_GRID,
               seed: int = 0) -> ImplicitFeatures:
    return ToyEncoder(d, grid, seed).encode(views)


class FileEncoder(EncoderBackend):
    """Precomputed features from a raw tensor container.

    The file holds ``image_features`` (V, k, D), ``camera_features`` (V, 1, D)
    and ``grid`` ([grid_h, grid_w]). The context views are ignored apart from
    a view-count check.
    """

    name = "file"

    def __init__(self, path):
        self.path = path
        self.features = load_features(path)
        self.dim = self.features.dim

    def encode(self, views: SceneContextSet) -> ImplicitFeatures:
        if len(views) != self.features.views:
            raise ShapeMismatch(f"{len(views)} views but file has {self.features.views}")
        return self.features


def save_features(path, feats: ImplicitFeatures) -> None:
    save_tensors(path, {
        "image_features": feats.image_features,
        "camera_features": feats.camera_features,
        "grid": np.array([feats.grid_h, feats.grid_w], dtype=np.float32),
    })


def load_features(path) -> ImplicitFeatures:
    t = load_tensors(path)
    gh, gw = (int(x) for x in t["grid"])
    return ImplicitFeatures(t["image_features"].astype(np.float64),
                            t["camera_features"].astype(np.float64), gh, gw)


def fuse(feats: ImplicitFeatures) -> np.ndarray:
    """``F_i + F_c`` with the camera token broadcast over the k positions."""
    fi, fc = feats.image_features, feats.camera_features
    if fc.shape != (fi.shape[0], 1, fi.shape[2]):
        raise ShapeMismatch(f"camera features {fc.shape} do not match image features {fi.shape}")
    return fi + fc


# --- projection into tokens (torch, learnable) ------------------------------

def _lerp_axis(x: torch.Tensor, out: int, dim: int) -> torch.Tensor:
    """Half-pixel-centred linear resize along ``dim`` with edge clamping.

    Written as ``a + f * (b - a)`` so constants and same-size resizes are exact.
    """
    n = x.shape[dim]
    if n == out:
        return x
    src = (torch.arange(out, dtype=torch.float64) + 0.5) * (n / out) - 0.5
    src = src.clamp(0.0, n - 1)
    i0 = src.floor().long()
    i1 = (i0 + 1).clamp(max=n - 1)
    frac = (src - i0.to(torch.float64)).to(x.dtype)
    a = x.index_select(dim, i0)
    b = x.index_select(dim, i1)
    shape = [1] * x.ndim
    shape[dim] = out
    return a + frac.view(shape) * (b - a)


def bilinear_resize(grid: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Resize (..., H, W, C) to (..., out_h, out_w, C)."""
    return _lerp_axis(_lerp_axis(grid, out_h, grid.ndim - 3), out_w, grid.ndim - 2)


class ImplicitProjector(nn.Module):
    """Resize the fused grid to (h/8, w/8), patchify 2x2 into ``d``, layer-norm."""

    def __init__(self, implicit_dim: int, hidden: int, patch: int = 2, eps: float = LN_EPS,
                 seed: int = 0):
        super().__init__()
        if eps <= 0:
            raise ValueError("layer-norm epsilon must be positive")
        self.patch = patch
        self.proj = nn.Conv2d(implicit_dim, hidden, kernel_size=patch, stride=patch)
        self.norm = nn.LayerNorm(hidden, eps=eps)
        g = torch.Generator().manual_seed(seed)
        bound = 1.0 / math.sqrt(implicit_dim * patch * patch)
        with torch.no_grad():
            self.proj.weight.copy_((torch.rand(self.proj.weight.shape, generator=g) * 2 - 1) * bound)
            self.proj.bias.zero_()

    def forward(self, fused: torch.Tensor, grid: tuple, target: tuple) -> torch.Tensor:
        v, k, dim = fused.shape
        gh, gw = grid
        th, tw = target
        if k != gh * gw:
            raise ShapeMismatch(f"k={k} does not match grid {gh}x{gw}")
        if th % self.patch or tw % self.patch:
            raise ShapeMismatch(f"target {th}x{tw} not divisible by patch {self.patch}")
        x = bilinear_resize(fused.reshape(v, gh, gw, dim), th, tw)
        x = self.proj(x.permute(0, 3, 1, 2))  # (V, d, th/p, tw/p)
        x = x.flatten(2).transpose(1, 2)
        return self.norm(x)


def project_to_tokens(fused, target: tuple, projector: ImplicitProjector, grid: tuple) -> torch.Tensor:
    """Convenience wrapper accepting numpy input; returns (V, th/2*tw/2, d)."""
    p = next(projector.parameters())
    x = torch.as_tensor(np.asarray(fused), dtype=p.dtype) if not torch.is_tensor(fused) else fused
    return projector(x, grid, target)
