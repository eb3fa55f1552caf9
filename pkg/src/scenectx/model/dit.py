"""A small diffusion transformer conditioned on scene context by concatenation.

The sequence is ``[noisy video | context images | implicit tokens]``. Self
attention runs over the whole sequence with 3D rotary positions on
(frame, row, col); the camera embedding is added to video tokens only (context
rows carry zeros); the prompt reaches the model through cross attention to a
learned tag embedding.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from ..encoder import DEFAULT_GRID, ImplicitProjector
from ..errors import BadDims, LengthMismatch, ShapeMismatch

SEG_VIDEO, SEG_IMAGE, SEG_IMPLICIT = 0, 1, 2
PATCH = 16
TIME_FREQS = 16


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    frames: int = 9
    height: int = 32
    width: int = 32
    views: int = 20
    implicit_dim: int = 64
    implicit_grid: tuple = DEFAULT_GRID
    patch: int = PATCH
    temporal_patch: int = 1
    prompt_vocab: int = 16
    prompt_tokens: int = 1
    ff_mult: int = 4
    frame_ids: str = "distinct"     # or "shared": F_t reuses the I_t frame ids
    prediction: str = "x0"          # or "velocity": the head predicts velocity directly
    rope_base: float = 100.0
    seed: int = 0

    def __post_init__(self):
        for k in ("hidden", "layers", "heads", "frames", "height", "width", "implicit_dim",
                  "patch", "temporal_patch", "prompt_vocab", "prompt_tokens", "ff_mult"):
            if getattr(self, k) < 1:
                raise BadDims(f"{k} must be >= 1")
        if self.views < 0:
            raise BadDims("views must be >= 0")
        if self.hidden % self.heads:
            raise BadDims(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if (self.hidden // self.heads) % 2:
            raise BadDims("head dimension must be even for rotary encoding")
        if self.height % self.patch or self.width % self.patch:
            raise BadDims(f"{self.height}x{self.width} not divisible by patch {self.patch}")
        if self.temporal_patch != 1:
            raise BadDims("only temporal patch 1 is supported")
        if self.frame_ids not in ("distinct", "shared"):
            raise ValueError(f"frame_ids must be 'distinct' or 'shared', got {self.frame_ids!r}")
        if self.prediction not in ("x0", "velocity"):
            raise ValueError(f"prediction must be 'x0' or 'velocity', got {self.prediction!r}")
        object.__setattr__(self, "implicit_grid", tuple(int(g) for g in self.implicit_grid))

    @property
    def grid(self) -> tuple:
        return self.height // self.patch, self.width // self.patch

    @property
    def tokens_per_frame(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * 3

    @property
    def sequence_length(self) -> int:
        return (self.frames + 2 * self.views) * self.tokens_per_frame

    def as_dict(self) -> dict:
        d = asdict(self)
        d["implicit_grid"] = list(self.implicit_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "implicit_grid" in d:
            d["implicit_grid"] = tuple(d["implicit_grid"])
        return cls(**d)


# --- pixels <-> patches -----------------------------------------------------

def patchify(frames, patch: int = PATCH) -> torch.Tensor:
    """(f, h, w, 3) in [0, 1] -> (f, gh*gw, patch*patch*3) scaled to [-1, 1]."""
    x = torch.as_tensor(np.asarray(frames)) if not torch.is_tensor(frames) else frames
    if x.ndim != 4 or x.shape[-1] != 3:
        raise BadDims(f"expected (f, h, w, 3) frames, got {tuple(x.shape)}")
    f, h, w, _ = x.shape
    if h % patch or w % patch:
        raise BadDims(f"{h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = x.reshape(f, gh, patch, gw, patch, 3).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(f, gh * gw, patch * patch * 3) * 2.0 - 1.0


def unpatchify(patches: torch.Tensor, grid: tuple, patch: int = PATCH) -> torch.Tensor:
    """Inverse of :func:`patchify`: (f, g, p*p*3) in [-1, 1] -> (f, h, w, 3) in [0, 1]."""
    gh, gw = grid
    f = patches.shape[0]
    x = patches.reshape(f, gh, gw, patch, patch, 3).permute(0, 1, 3, 2, 4, 5)
    return (x.reshape(f, gh * patch, gw * patch, 3) + 1.0) * 0.5


# --- rotary positions ---------------------------------------------------------

def rope_tables(pos: torch.Tensor, head_dim: int, base: float, dtype) -> tuple:
    """cos/sin tables (N, head_dim/2); pair j rotates with axis j % 3."""
    pairs = head_dim // 2
    axis = torch.arange(pairs) % 3
    rank = torch.arange(pairs) // 3
    per_axis = torch.bincount(axis, minlength=3).clamp(min=1)
    freq = base ** (-rank.to(torch.float64) / per_axis[axis].to(torch.float64))
    angle = pos[:, axis].to(torch.float64) * freq
    return torch.cos(angle).to(dtype), torch.sin(angle).to(dtype)


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = torch.stack((x1 * cos - x2 * sin, x1 * sin + x2 * cos), dim=-1)
    return out.flatten(-2)


# --- sequence assembly --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TokenSequence:
    tokens: torch.Tensor      # (B, N, d) content, without camera
    positions: torch.Tensor   # (N, 3) frame, row, col
    segments: torch.Tensor    # (N,)
    camera: torch.Tensor      # (B, N, d), zero outside the video segment
    frames: int
    views: int
    grid: tuple = field(default=(1, 1))

    @property
    def length(self) -> int:
        return self.tokens.shape[1]

    @property
    def video_slice(self) -> slice:
        return slice(0, self.frames * self.grid[0] * self.grid[1])


def grid_positions(frame_ids, grid: tuple) -> torch.Tensor:
    gh, gw = grid
    rows = torch.arange(gh).repeat_interleave(gw)
    cols = torch.arange(gw).repeat(gh)
    out = [torch.stack([torch.full((gh * gw,), int(fid)), rows, cols], dim=1) for fid in frame_ids]
    return torch.cat(out) if out else torch.zeros((0, 3), dtype=torch.long)


def assemble_sequence(video_tokens, i_tokens, f_tokens, camera_emb, grid: tuple,
                      frame_ids: str = "distinct") -> TokenSequence:
    """Concatenate ``[video | I_t | F_t]`` along the frame axis.

    Shapes: video (B, f, g, d), I_t and F_t (B, V, g, d), camera (B, f, d).
    """
    b, f, g, d = video_tokens.shape
    v = i_tokens.shape[1]
    if i_tokens.shape != (b, v, g, d) or f_tokens.shape != (b, v, g, d):
        raise ShapeMismatch(f"context tokens {tuple(i_tokens.shape)}/{tuple(f_tokens.shape)} "
                            f"do not match video {tuple(video_tokens.shape)}")
    if camera_emb.shape != (b, f, d):
        raise ShapeMismatch(f"camera embedding {tuple(camera_emb.shape)} != {(b, f, d)}")
    if g != grid[0] * grid[1]:
        raise ShapeMismatch(f"{g} tokens per frame but grid {grid}")
    tokens = torch.cat([video_tokens.reshape(b, f * g, d), i_tokens.reshape(b, v * g, d),
                        f_tokens.reshape(b, v * g, d)], dim=1)
    f_ids = range(f + v, f + 2 * v) if frame_ids == "distinct" else range(f, f + v)
    positions = torch.cat([grid_positions(range(f), grid), grid_positions(range(f, f + v), grid),
                           grid_positions(f_ids, grid)])
    segments = torch.cat([torch.full((f * g,), SEG_VIDEO), torch.full((v * g,), SEG_IMAGE),
                          torch.full((v * g,), SEG_IMPLICIT)])
    cam = camera_emb[:, :, None, :].expand(b, f, g, d).reshape(b, f * g, d)
    camera = torch.cat([cam, torch.zeros((b, 2 * v * g, d), dtype=cam.dtype)], dim=1)
    return TokenSequence(tokens, positions, segments, camera, f, v, tuple(grid))


# --- network ----------------------------------------------------------------------

class Attention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(d, d)
        self.kv = nn.Linear(d, 2 * d)
        self.out = nn.Linear(d, d)

    def forward(self, x, ctx, rope=None):
        b, n, d = x.shape
        h = self.heads
        q = self.q(x).view(b, n, h, d // h).transpose(1, 2)
        k, v = self.kv(ctx).view(b, ctx.shape[1], 2, h, d // h).permute(2, 0, 3, 1, 4)
        if rope is not None:
            cos, sin = rope
            q = apply_rope(q, cos, sin)
            k = apply_rope(k, cos, sin)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d // h), dim=-1)
        return self.out((att @ v).transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    def __init__(self, d: int, heads: int, ff_mult: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = Attention(d, heads)
        self.norm2 = nn.LayerNorm(d)
        self.cross = Attention(d, heads)
        self.norm3 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, ff_mult * d), nn.GELU(), nn.Linear(ff_mult * d, d))

    def forward(self, x, prompt, rope):
        h = self.norm1(x)
        x = x + self.attn(h, h, rope)
        x = x + self.cross(self.norm2(x), prompt)
        return x + self.ff(self.norm3(x))


def timestep_features(t: torch.Tensor, n: int = TIME_FREQS) -> torch.Tensor:
    freqs = torch.exp(torch.linspace(0.0, math.log(1000.0), n, dtype=torch.float64)).to(t.dtype)
    a = t[:, None] * freqs
    return torch.cat([torch.sin(a), torch.cos(a)], dim=1)


class ContextDiT(nn.Module):
    """Parameter groups: ``patch_embed``, ``segment``, ``time``, ``camera``,
    ``implicit``, ``prompt``, ``blocks``, ``head``."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.patch_embed = nn.Linear(cfg.patch_dim, d)
            self.segment = nn.Embedding(3, d)
            self.time = nn.Linear(2 * TIME_FREQS, d)
            self.camera = nn.Linear(12, d)
            self.implicit = ImplicitProjector(cfg.implicit_dim, d, 2, seed=cfg.seed)
            self.prompt = nn.Embedding(cfg.prompt_vocab, cfg.prompt_tokens * d)
            self.blocks = nn.ModuleList([Block(d, cfg.heads, cfg.ff_mult) for _ in range(cfg.layers)])
            self.norm_out = nn.LayerNorm(d)
            # two-layer head: a single d -> patch_dim map caps the rank of the
            # decoded patches at d, which limits reconstruction of 16x16 patches
            self.head = nn.Sequential(nn.Linear(d, cfg.ff_mult * d), nn.GELU(),
                                      nn.Linear(cfg.ff_mult * d, cfg.patch_dim))
            with torch.no_grad():
                self.segment.weight.normal_(0.0, 0.02)
                self.prompt.weight.normal_(0.0, 0.02)
                self.camera.weight.normal_(0.0, 0.02)
                self.camera.bias.zero_()

    @property
    def dtype(self):
        return self.patch_embed.weight.dtype

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    # tokenizers --------------------------------------------------------------
    def tokenize_video(self, patches: torch.Tensor) -> torch.Tensor:
        """(..., g, patch_dim) -> (..., g, d), shared by video frames and context images."""
        return self.patch_embed(patches)

    def tokenize_context_images(self, ctx_patches: torch.Tensor) -> torch.Tensor:
        return self.patch_embed(ctx_patches)

    def encode_camera(self, cams: torch.Tensor, frames: int | None = None) -> torch.Tensor:
        """(B, f, 12) flattened [R|t] rows -> (B, f, d)."""
        if frames is not None and cams.shape[-2] != frames:
            raise LengthMismatch(f"trajectory has {cams.shape[-2]} frames, model expects {frames}")
        return self.camera(cams)

    def implicit_tokens(self, fused: torch.Tensor) -> torch.Tensor:
        """(B, V, k, D) fused features -> (B, V, g, d)."""
        b, v, k, dim = fused.shape
        cfg = self.cfg
        target = (cfg.height // 8, cfg.width // 8)
        if v == 0:
            return fused.new_zeros((b, 0, cfg.tokens_per_frame, cfg.hidden))
        out = self.implicit(fused.reshape(b * v, k, dim), cfg.implicit_grid, target)
        return out.reshape(b, v, -1, cfg.hidden)

    # sequence + transformer --------------------------------------------------
    def build_sequence(self, x_t, ctx_patches, fused, cams) -> TokenSequence:
        """x_t (B, f, g, P); ctx_patches (B, V, g, P); fused (B, V, k, D); cams (B, f, 12)."""
        cfg = self.cfg
        # one embedding call for video and context so equal pixels give equal
        # rows (GEMM kernels may round differently for different batch shapes)
        both = self.patch_embed(torch.cat([x_t, ctx_patches.to(x_t.dtype)], dim=1))
        video, i_tok = both[:, :cfg.frames], both[:, cfg.frames:]
        f_tok = self.implicit_tokens(fused)
        cam = self.encode_camera(cams, cfg.frames)
        return assemble_sequence(video, i_tok, f_tok, cam, cfg.grid, cfg.frame_ids)

    def forward(self, seq: TokenSequence, t: torch.Tensor, prompt_tag: torch.Tensor) -> torch.Tensor:
        """Raw head output over the video tokens, shape (B, f, g, patch_dim)."""
        cfg = self.cfg
        b = seq.tokens.shape[0]
        x = seq.tokens + seq.camera + self.segment(seq.segments)[None]
        x = x + self.time(timestep_features(t.to(x.dtype)))[:, None, :]
        prompt = self.prompt(prompt_tag).view(b, cfg.prompt_tokens, cfg.hidden)
        rope = rope_tables(seq.positions, cfg.hidden // cfg.heads, cfg.rope_base, x.dtype)
        for blk in self.blocks:
            x = blk(x, prompt, rope)
        out = self.head(self.norm_out(x[:, seq.video_slice]))
        return out.view(b, seq.frames, -1, cfg.patch_dim)

    def velocity(self, x_t, t, ctx_patches, fused, cams, prompt_tag) -> torch.Tensor:
        """Predicted rectified-flow velocity ``eps - x0`` at the noisy video ``x_t``."""
        seq = self.build_sequence(x_t, ctx_patches, fused, cams)
        out = self.forward(seq, t, prompt_tag)
        if self.cfg.prediction == "velocity":
            return out
        return (x_t - out) / t.to(out.dtype).view(-1, 1, 1, 1)


def zero_model_(model: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    return model


def param_groups(model: ContextDiT) -> dict:
    groups = {}
    for name, p in model.named_parameters():
        top = name.split(".")[0]
        key = {"norm_out": "head"}.get(top, top)
        if top == "blocks":
            part = name.split(".")[2]
            key = {"attn": "attention", "norm1": "attention", "cross": "cross_attention",
                   "norm2": "cross_attention", "ff": "feed_forward", "norm3": "feed_forward"}[part]
        groups.setdefault(key, []).append((name, p))
    return groups
