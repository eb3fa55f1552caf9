"""Rectified-flow training, Euler sampling and checkpoints for :class:`ContextDiT`."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch

from ..encoder import ImplicitFeatures, ToyEncoder, fuse
from ..errors import FormatError
from ..geometry import Trajectory, normalize_trajectory
from ..panorama import Panorama, SceneContextSet, scene_context_from_panorama
from .dit import ContextDiT, ModelConfig, patchify, unpatchify


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    warmup: int = 50
    batch: int = 4
    t_min: float = 0.02
    sigma_shift: float = 1.0
    shuffle: bool = True
    decay_steps: int = 0            # cosine decay to lr_floor over this many steps; 0 = constant
    lr_floor: float = 0.1
    adam_betas: tuple = (0.9, 0.999)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)


def shift_time(t, shift: float):
    """Sigma shift ``s t / (1 + (s - 1) t)``; identity for ``s = 1``."""
    if shift == 1.0:
        return t
    return shift * t / (1.0 + (shift - 1.0) * t)


def shuffle_context(views: SceneContextSet, feats: ImplicitFeatures, rng):
    """Keep view 0 in place and permute views 1..V-1 uniformly.

    The same permutation is applied to the images and to both feature arrays.
    """
    perm = context_permutation(len(views), rng)
    return views.permuted(perm), feats.permuted(perm), perm


def context_permutation(v: int, rng) -> np.ndarray:
    if v <= 1:
        return np.arange(v)
    return np.concatenate([[0], 1 + rng.permutation(v - 1)])


# --- training data --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrainExample:
    """Model-ready tensors for one sample.

    ``x0`` (f, g, P) video patches in [-1, 1]; ``context`` (V, g, P) context
    patches; ``fused`` (V, k, D) fused implicit features; ``cams`` (f, 12)
    normalized trajectory rows; ``prompt_tag`` int.
    """

    x0: torch.Tensor
    context: torch.Tensor
    fused: torch.Tensor
    cams: torch.Tensor
    prompt_tag: int


def frame_indices(total: int, frames: int) -> np.ndarray:
    return np.round(np.linspace(0, total - 1, frames)).astype(int)


def prepare_condition(cfg: ModelConfig, panorama: Panorama, start_yaw: float,
                      encoder=None, dtype=torch.float32):
    """Context images and fused implicit features from a panorama."""
    views = scene_context_from_panorama(panorama, start_yaw, cfg.views, cfg.width, cfg.height)
    encoder = encoder or ToyEncoder(cfg.implicit_dim, cfg.implicit_grid, cfg.seed)
    if cfg.views == 0:
        ctx = torch.zeros((0, cfg.tokens_per_frame, cfg.patch_dim), dtype=dtype)
        gh, gw = cfg.implicit_grid
        fused = torch.zeros((0, gh * gw, cfg.implicit_dim), dtype=dtype)
        return views, ctx, fused
    feats = encoder.encode(views)
    ctx = patchify(views.pixels().astype(np.float64), cfg.patch).to(dtype)
    return views, ctx, torch.as_tensor(fuse(feats), dtype=dtype)


def camera_rows(traj: Trajectory, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(normalize_trajectory(traj).matrices().reshape(-1, 12), dtype=dtype)


def prepare_example(cfg: ModelConfig, video: np.ndarray, traj: Trajectory, panorama: Panorama,
                    prompt_tag: int, encoder=None, dtype=torch.float32) -> TrainExample:
    """Subsample ``video``/``traj`` to ``cfg.frames`` frames and build the conditions."""
    idx = frame_indices(video.shape[0], cfg.frames)
    clip = np.asarray(video, dtype=np.float64)[idx]
    sub = Trajectory(tuple(traj[i] for i in idx))
    _, ctx, fused = prepare_condition(cfg, panorama, traj[0].yaw_pitch()[0], encoder, dtype)
    return TrainExample(patchify(clip, cfg.patch).to(dtype), ctx, fused, camera_rows(sub, dtype),
                        int(prompt_tag))


# --- state ----------------------------------------------------------------------

class TrainState:
    """Model, optimizer, step counter and the numpy generator driving all draws."""

    def __init__(self, cfg: ModelConfig, tcfg: TrainConfig | None = None, seed: int | None = None,
                 dtype=torch.float32):
        self.cfg = cfg
        self.tcfg = tcfg or TrainConfig()
        self.model = ContextDiT(cfg).to(dtype)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=self.tcfg.lr,
                                          betas=self.tcfg.adam_betas)
        self.step = 0
        self.rng = np.random.default_rng(cfg.seed if seed is None else seed)

    def lr_at(self, step: int) -> float:
        tc = self.tcfg
        scale = min(1.0, (step + 1) / tc.warmup) if tc.warmup > 0 else 1.0
        if tc.decay_steps > 0:
            frac = min(1.0, step / tc.decay_steps)
            scale *= tc.lr_floor + (1.0 - tc.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac))
        return tc.lr * scale


def _draw(state_rng, examples, cfg: ModelConfig, tcfg: TrainConfig, shuffle: bool, dtype):
    """Noise, times and permutations for one batch; consumes ``state_rng`` in a fixed order."""
    t = tcfg.t_min + (1.0 - tcfg.t_min) * state_rng.random(len(examples))
    t = shift_time(t, tcfg.sigma_shift)
    eps = [torch.as_tensor(state_rng.standard_normal(tuple(e.x0.shape)), dtype=dtype) for e in examples]
    perms = [context_permutation(e.context.shape[0], state_rng) if shuffle else np.arange(e.context.shape[0])
             for e in examples]
    return torch.as_tensor(t, dtype=dtype), eps, perms


def flow_loss(model: ContextDiT, examples, t, eps, perms) -> torch.Tensor:
    """Mean squared velocity error over video tokens for a batch."""
    x0 = torch.stack([e.x0 for e in examples])
    noise = torch.stack(eps)
    tt = t.view(-1, 1, 1, 1)
    x_t = (1.0 - tt) * x0 + tt * noise
    ctx = torch.stack([e.context[torch.as_tensor(p, dtype=torch.long)] for e, p in zip(examples, perms)])
    fused = torch.stack([e.fused[torch.as_tensor(p, dtype=torch.long)] for e, p in zip(examples, perms)])
    cams = torch.stack([e.cams for e in examples])
    tags = torch.as_tensor([e.prompt_tag for e in examples], dtype=torch.long)
    v = model.velocity(x_t, t, ctx, fused, cams, tags)
    return torch.mean((v - (noise - x0)) ** 2)


def select_batch(state: TrainState, n: int) -> list:
    b = state.tcfg.batch
    if b >= n:
        # small datasets: repeat examples so each step sees several noise draws
        return [i % n for i in range(b)]
    return sorted(int(i) for i in state.rng.choice(n, size=b, replace=False))


def training_step(state: TrainState, examples, rng=None) -> float:
    """One optimizer step on ``examples`` (already batched); returns the loss."""
    rng = state.rng if rng is None else rng
    dtype = state.model.dtype
    t, eps, perms = _draw(rng, examples, state.cfg, state.tcfg, state.tcfg.shuffle, dtype)
    for g in state.optimizer.param_groups:
        g["lr"] = state.lr_at(state.step)
    state.optimizer.zero_grad(set_to_none=True)
    loss = flow_loss(state.model, examples, t, eps, perms)
    loss.backward()
    state.optimizer.step()
    state.step += 1
    return float(loss.detach())


@torch.no_grad()
def eval_loss(state: TrainState, examples, seed: int = 1234, draws: int = 4) -> float:
    """Loss on fixed draws (ordered context), comparable before and after training."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(draws):
        t, eps, perms = _draw(rng, examples, state.cfg, state.tcfg, False, state.model.dtype)
        total += float(flow_loss(state.model, examples, t, eps, perms))
    return total / draws


def train(state: TrainState, examples, steps: int, log=None, log_every: int = 50) -> list:
    losses = []
    for _ in range(steps):
        batch = [examples[i] for i in select_batch(state, len(examples))]
        losses.append(training_step(state, batch))
        if log is not None and (state.step % log_every == 0 or state.step == 1):
            log({"step": state.step, "loss": losses[-1], "lr": state.lr_at(state.step - 1)})
    return losses


@torch.no_grad()
def sample(model: ContextDiT, context: torch.Tensor, fused: torch.Tensor, cams: torch.Tensor,
           prompt_tag: int, steps: int = 50, seed: int = 0, shift: float = 1.0) -> np.ndarray:
    """Euler integration from noise at t=1 to t=0; returns (f, h, w, 3) in [0, 1]."""
    cfg = model.cfg
    dtype = model.dtype
    rng = np.random.default_rng(seed)
    x = torch.as_tensor(rng.standard_normal((1, cfg.frames, cfg.tokens_per_frame, cfg.patch_dim)),
                        dtype=dtype)
    ctx, fz, cm = context[None].to(dtype), fused[None].to(dtype), cams[None].to(dtype)
    tag = torch.as_tensor([int(prompt_tag)], dtype=torch.long)
    grid = [shift_time(1.0 - i / steps, shift) for i in range(steps + 1)]
    for t0, t1 in zip(grid, grid[1:]):
        v = model.velocity(x, torch.full((1,), t0, dtype=dtype), ctx, fz, cm, tag)
        x = x + (t1 - t0) * v
    frames = unpatchify(x[0].to(torch.float64), cfg.grid, cfg.patch)
    return np.clip(frames.numpy(), 0.0, 1.0)


# --- checkpoints ------------------------------------------------------------------

CKPT_MAGIC = b"SCKP"
CKPT_VERSION = 1


def _tensor_bytes(t: torch.Tensor) -> bytes:
    a = t.detach().cpu().contiguous().numpy()
    return a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes()


def checkpoint_bytes(state: TrainState) -> bytes:
    """Serialize parameters, Adam moments, step and rng state deterministically."""
    names = [n for n, _ in state.model.named_parameters()]
    params = dict(state.model.named_parameters())
    tensors = [(n, params[n]) for n in names]
    adam_steps = {}
    for n in names:
        st = state.optimizer.state.get(params[n], {})
        if st:
            tensors.append((f"adam.m.{n}", st["exp_avg"]))
            tensors.append((f"adam.v.{n}", st["exp_avg_sq"]))
            adam_steps[n] = int(st["step"])
    index, payload, offset = [], [], 0
    for n, t in tensors:
        b = _tensor_bytes(t)
        index.append({"name": n, "shape": list(t.shape), "dtype": str(t.dtype).replace("torch.", ""),
                      "offset": offset, "nbytes": len(b)})
        payload.append(b)
        offset += len(b)
    header = {
        "model_config": state.cfg.as_dict(),
        "train_config": state.tcfg.as_dict(),
        "step": state.step,
        "rng": state.rng.bit_generator.state,
        "adam_steps": adam_steps,
        "tensors": index,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    return CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hb)) + hb + b"".join(payload)


def save_checkpoint(path, state: TrainState) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(state))


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as fh:
        data = fh.read()
    return checkpoint_from_bytes(data)


_DTYPES = {"float32": (np.float32, torch.float32), "float64": (np.float64, torch.float64)}


def checkpoint_from_bytes(data: bytes) -> TrainState:
    if data[:4] != CKPT_MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<II", data, 4)
        if version != CKPT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        header = json.loads(data[12:12 + hlen])
        base = 12 + hlen
        cfg = ModelConfig.from_dict(header["model_config"])
        tcfg = TrainConfig.from_dict(header["train_config"])
        raw = {}
        for e in header["tensors"]:
            npd, _ = _DTYPES[e["dtype"]]
            chunk = data[base + e["offset"]: base + e["offset"] + e["nbytes"]]
            if len(chunk) != e["nbytes"]:
                raise FormatError(f"checkpoint truncated in tensor {e['name']}")
            arr = np.frombuffer(chunk, dtype=np.dtype(npd).newbyteorder("<")).reshape(e["shape"])
            raw[e["name"]] = torch.from_numpy(arr.astype(npd))
        first = header["tensors"][0]["dtype"]
    except (KeyError, ValueError, struct.error) as exc:
        raise FormatError(f"corrupt checkpoint: {exc}") from exc
    state = TrainState(cfg, tcfg, dtype=_DTYPES[first][1])
    params = dict(state.model.named_parameters())
    with torch.no_grad():
        for n, p in params.items():
            p.copy_(raw[n])
    for n, steps in header["adam_steps"].items():
        state.optimizer.state[params[n]] = {
            "step": torch.tensor(float(steps)),
            "exp_avg": raw[f"adam.m.{n}"].clone(),
            "exp_avg_sq": raw[f"adam.v.{n}"].clone(),
        }
    state.step = int(header["step"])
    state.rng.bit_generator.state = header["rng"]
    return state

