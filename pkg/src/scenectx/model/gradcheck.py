"""Central finite-difference checks of autograd gradients at float64."""

from __future__ import annotations

import numpy as np
import torch

from .dit import ContextDiT, ModelConfig, param_groups
from .training import TrainExample, context_permutation, flow_loss


def small_config(**kw) -> ModelConfig:
    base = dict(hidden=8, layers=1, heads=2, frames=2, height=16, width=16, views=2,
                implicit_dim=4, implicit_grid=(3, 3), prompt_vocab=4, prompt_tokens=2, ff_mult=2)
    base.update(kw)
    return ModelConfig(**base)


def random_examples(cfg: ModelConfig, n: int = 2, seed: int = 0, dtype=torch.float64):
    rng = np.random.default_rng(seed)
    k = cfg.implicit_grid[0] * cfg.implicit_grid[1]
    g = cfg.tokens_per_frame
    out = []
    for i in range(n):
        out.append(TrainExample(
            torch.as_tensor(rng.uniform(-1, 1, (cfg.frames, g, cfg.patch_dim)), dtype=dtype),
            torch.as_tensor(rng.uniform(-1, 1, (cfg.views, g, cfg.patch_dim)), dtype=dtype),
            torch.as_tensor(rng.normal(size=(cfg.views, k, cfg.implicit_dim)), dtype=dtype),
            torch.as_tensor(rng.normal(size=(cfg.frames, 12)), dtype=dtype),
            int(rng.integers(cfg.prompt_vocab)),
        ))
    return out


def randomize_(model: torch.nn.Module, seed: int = 0, scale: float = 0.3) -> torch.nn.Module:
    """Replace every parameter with seeded noise so no gradient is trivially zero."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return model


def fixed_loss(model: ContextDiT, examples, seed: int = 1):
    """Training loss with noise, times and context permutation frozen."""
    rng = np.random.default_rng(seed)
    dtype = model.dtype
    t = torch.as_tensor(0.2 + 0.7 * rng.random(len(examples)), dtype=dtype)
    eps = [torch.as_tensor(rng.standard_normal(tuple(e.x0.shape)), dtype=dtype) for e in examples]
    perms = [context_permutation(e.context.shape[0], rng) for e in examples]
    return lambda: flow_loss(model, examples, t, eps, perms)


def check_gradients(model: torch.nn.Module, loss_fn, groups: dict, max_entries: int = 48,
                    h: float = 1e-6, seed: int = 0) -> dict:
    """Relative error ``|fd - ad| / max(|fd|, |ad|)`` per parameter group.

    Up to ``max_entries`` coordinates per tensor (seeded choice) are perturbed
    by ``+-h``; the norms are taken over all checked coordinates of a group.
    """
    model.zero_grad(set_to_none=True)
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    report = {}
    for group, named in groups.items():
        fd_all, ad_all = [], []
        for _, p in named:
            flat = p.data.view(-1)
            grad = p.grad.reshape(-1) if p.grad is not None else torch.zeros_like(flat)
            idx = np.arange(flat.numel())
            if flat.numel() > max_entries:
                idx = np.sort(rng.choice(flat.numel(), size=max_entries, replace=False))
            with torch.no_grad():
                for i in idx:
                    orig = flat[i].item()
                    flat[i] = orig + h
                    up = loss_fn().item()
                    flat[i] = orig - h
                    down = loss_fn().item()
                    flat[i] = orig
                    fd_all.append((up - down) / (2 * h))
                    ad_all.append(grad[i].item())
        fd, ad = np.array(fd_all), np.array(ad_all)
        denom = max(np.linalg.norm(fd), np.linalg.norm(ad), 1e-300)
        report[group] = {"rel_err": float(np.linalg.norm(fd - ad) / denom), "checked": len(fd),
                         "grad_norm": float(np.linalg.norm(ad))}
    return report


def gradcheck_model(cfg: ModelConfig | None = None, seed: int = 0, max_entries: int = 48) -> dict:
    cfg = cfg or small_config()
    model = randomize_(ContextDiT(cfg).to(torch.float64), seed)
    examples = random_examples(cfg, 2, seed)
    return check_gradients(model, fixed_loss(model, examples, seed + 1), param_groups(model),
                           max_entries, seed=seed)
