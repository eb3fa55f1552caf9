"""Command-line entry point: ``scenectx <subcommand> ...``.

Every subcommand writes ``run_config.json`` into its ``--out`` directory. Passing
that file back through ``--from-config`` (with a fresh ``--out``) reproduces the
run; flags given on the command line override the snapshot.

Exit codes: 0 success, 1 user error (bad flags, missing or corrupt inputs),
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import traceback

import numpy as np

from .errors import FormatError, SceneCtxError

RUN_CONFIG = "run_config.json"
SNAPSHOT_VERSION = 1


class UsageError(Exception):
    """Bad command-line input; reported with exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _need(args, *names):
    for n in names:
        if getattr(args, n) in (None, ""):
            raise UsageError(f"{args.command}: --{n.replace('_', '-')} is required")


def write_run_config(args, out_dir: str) -> str:
    # --out is left out so that identical runs in different directories give identical trees
    skip = {"command", "from_config", "func", "out"}
    snap = {
        "format": "run_config",
        "version": SNAPSHOT_VERSION,
        "subcommand": args.command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in skip},
    }
    path = os.path.join(out_dir, RUN_CONFIG)
    with open(path, "w") as fh:
        json.dump(snap, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _read_snapshot(path: str, command: str) -> dict:
    try:
        with open(path) as fh:
            snap = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config snapshot {path}: {exc}") from exc
    if snap.get("format") != "run_config" or snap.get("version") != SNAPSHOT_VERSION:
        raise UsageError(f"{path} is not a version-{SNAPSHOT_VERSION} run config")
    if snap.get("subcommand") != command:
        raise UsageError(f"{path} was written by '{snap.get('subcommand')}', not '{command}'")
    return snap["args"]


def _set_threads(n: int) -> None:
    import torch

    torch.set_num_threads(max(1, int(n)))


# --- dataset ------------------------------------------------------------------------

def cmd_dataset(args) -> int:
    from .dataset import DatasetConfig, build_dataset

    _need(args, "out")
    if args.width % 16 or args.height % 16 or args.width < 16 or args.height < 16:
        raise UsageError(f"resolution {args.width}x{args.height} must be positive multiples of 16")
    if args.pairs < 1 or args.scenes < 1 or args.frames < 2:
        raise UsageError("need --pairs >= 1, --scenes >= 1 and --frames >= 2")
    cfg = DatasetConfig(args.pairs, args.scenes, args.seed, args.frames, args.width, args.height,
                        args.pano_h)
    os.makedirs(args.out, exist_ok=True)
    write_run_config(args, args.out)
    manifest = build_dataset(cfg, args.out, log=None if args.quiet else _log)
    print(f"{os.path.join(args.out, 'manifest.json')} {len(manifest['samples'])} pairs")
    return 0


# --- project ------------------------------------------------------------------------

def cmd_project(args) -> int:
    from .imageio import load_image, save_tensor, write_png
    from .panorama import Panorama, equirect_to_perspective

    _need(args, "panorama", "out")
    if args.views < 1:
        raise UsageError("--views must be >= 1")
    pano = Panorama(load_image(args.panorama))
    os.makedirs(args.out, exist_ok=True)
    write_run_config(args, args.out)
    spacing = 360.0 / args.views
    entries = []
    for i in range(args.views):
        yaw = args.start_yaw + i * spacing
        view = equirect_to_perspective(pano, yaw, args.pitch, args.fov, args.width, args.height)
        name = f"view_{i:03d}.{'png' if args.format == 'png' else 'rten'}"
        if args.format == "png":
            write_png(os.path.join(args.out, name), view.pixels)
        else:
            save_tensor(os.path.join(args.out, name), view.pixels)
        entries.append({"index": i, "file": name, "yaw": yaw, "pitch": args.pitch, "fov": args.fov})
    index = {"format": "context_views", "version": 1, "start_yaw": args.start_yaw,
             "spacing": spacing, "width": args.width, "height": args.height, "views": entries}
    with open(os.path.join(args.out, "index.json"), "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{args.views} views -> {args.out}")
    return 0


def load_context_dir(path: str):
    """Read views written by ``project`` back into a SceneContextSet."""
    from .imageio import load_image
    from .panorama import PerspectiveView, SceneContextSet

    try:
        with open(os.path.join(path, "index.json")) as fh:
            index = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read context index in {path}: {exc}") from exc
    views = tuple(PerspectiveView(load_image(os.path.join(path, e["file"])), e["yaw"], e["pitch"],
                                  e["fov"]) for e in index["views"])
    return SceneContextSet(views, float(index["start_yaw"]))


# --- gen-traj -----------------------------------------------------------------------

def default_magnitude(kind: str) -> float:
    from .trajectory import DEFAULT_SWEEP

    if kind in ("pan", "arc_horizontal"):
        return DEFAULT_SWEEP
    if kind in ("tilt", "arc_vertical"):
        return 30.0
    return 0.5


def cmd_gen_traj(args) -> int:
    from .geometry import save_trajectory
    from .scene import AIM_HEIGHT
    from .trajectory import DIRECTIONS, MovementSpec, generate, sample_movement, start_pose_for

    _need(args, "out")
    subject = np.array([0.0, AIM_HEIGHT, 0.0])
    facing = np.array([0.0, 0.0, 1.0])
    if args.kind == "random":
        spec, traj = sample_movement(args.seed, subject, facing, args.frames, args.distance)
    else:
        direction = args.direction or DIRECTIONS[args.kind][0]
        magnitude = default_magnitude(args.kind) if args.magnitude is None else args.magnitude
        azimuth = float(np.random.default_rng(args.seed).uniform(-45.0, 45.0)) if args.jitter else 0.0
        start = start_pose_for(subject, facing, azimuth, args.distance)
        spec = MovementSpec(args.kind, direction, magnitude, args.frames, subject, start)
        traj = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    write_run_config(args, args.out)
    save_trajectory(traj, os.path.join(args.out, "trajectory.json"))
    meta = dict(spec.metadata(), seed=args.seed)
    with open(os.path.join(args.out, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{spec.kind} {spec.direction} {spec.magnitude:g} over {spec.frames} frames -> {args.out}")
    return 0


# --- train --------------------------------------------------------------------------

PRESETS = {
    "tiny": dict(hidden=32, layers=1, heads=2, frames=5, views=4, implicit_dim=16, implicit_grid=(2, 2)),
    "small": dict(hidden=64, layers=2, heads=4, frames=9, views=20, implicit_dim=64, implicit_grid=(4, 4)),
}


def model_config_from(spec: str, height: int, width: int, frames: int, seed: int):
    """Preset name or JSON file -> ModelConfig matched to the dataset resolution."""
    from .model import ModelConfig

    if spec in PRESETS:
        base = dict(PRESETS[spec])
    else:
        try:
            with open(spec) as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config must be one of {sorted(PRESETS)} or a JSON file: {exc}") from exc
        base = dict(base.get("model_config", base))
    base.update(height=height, width=width, seed=seed)
    base["frames"] = min(int(base.get("frames", 9)), frames)
    return ModelConfig.from_dict(base)


def load_examples(dataset_dir: str, cfg, dtype):
    from .dataset import load_manifest, load_sample
    from .model import prepare_example

    manifest = load_manifest(dataset_dir)
    out = []
    for entry in manifest["samples"]:
        s = load_sample(dataset_dir, entry)
        out.append(prepare_example(cfg, s.video_with_subject, s.trajectory, s.panorama,
                                   entry["prompt_tag"], dtype=dtype))
    return manifest, out


def cmd_train(args) -> int:
    import torch

    from .dataset import load_manifest
    from .model import TrainConfig, TrainState, load_checkpoint, save_checkpoint, train

    _need(args, "dataset", "out")
    _set_threads(args.threads)
    dtype = torch.float64 if args.dtype == "float64" else torch.float32
    manifest = load_manifest(args.dataset)
    dc = manifest["config"]
    if args.resume:
        state = load_checkpoint(args.resume)
        cfg = state.cfg
    else:
        cfg = model_config_from(args.config, dc["height"], dc["width"], dc["frames"], args.seed)
        tcfg = TrainConfig(lr=args.lr, warmup=args.warmup, batch=args.batch,
                           sigma_shift=args.sigma_shift, shuffle=args.shuffle == "on",
                           decay_steps=args.decay_steps)
        state = TrainState(cfg, tcfg, seed=args.seed, dtype=dtype)
    if (cfg.height, cfg.width) != (dc["height"], dc["width"]):
        raise UsageError(f"checkpoint is {cfg.height}x{cfg.width}, dataset is {dc['height']}x{dc['width']}")
    _, examples = load_examples(args.dataset, cfg, state.model.dtype)
    os.makedirs(args.out, exist_ok=True)
    write_run_config(args, args.out)
    log_path = os.path.join(args.out, "train_log.jsonl")
    with open(log_path, "w") as fh:
        def log(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if not args.quiet:
                _log(f"step {rec['step']}: loss {rec['loss']:.5f}")

        t0 = time.perf_counter()
        losses = train(state, examples, args.steps, log, args.log_every)
    ckpt = args.ckpt_out or os.path.join(args.out, "checkpoint.sckp")
    save_checkpoint(ckpt, state)
    final = losses[-1] if losses else float("nan")
    print(f"{args.steps} steps in {time.perf_counter() - t0:.1f}s, last loss {final:.5f} -> {ckpt}")
    return 0


# --- sample -------------------------------------------------------------------------

def cmd_sample(args) -> int:
    from .encoder import ToyEncoder, fuse
    from .geometry import Trajectory, load_trajectory, save_trajectory
    from .imageio import save_tensor, write_png
    from .model import load_checkpoint, prepare_condition, sample
    from .model.dit import patchify
    from .model.training import camera_rows, frame_indices

    import torch

    _need(args, "ckpt", "out")
    _set_threads(args.threads)
    state = load_checkpoint(args.ckpt)
    cfg, model, dtype = state.cfg, state.model, state.model.dtype
    prompt = args.prompt_tag
    if args.dataset:
        from .dataset import load_manifest, load_sample

        entries = load_manifest(args.dataset)["samples"]
        if not 0 <= args.index < len(entries):
            raise UsageError(f"--index {args.index} out of range for {len(entries)} samples")
        s = load_sample(args.dataset, entries[args.index])
        traj = load_trajectory(args.trajectory) if args.trajectory else s.trajectory
        _, ctx, fused = prepare_condition(cfg, s.panorama, s.trajectory[0].yaw_pitch()[0], dtype=dtype)
        prompt = entries[args.index]["prompt_tag"] if prompt is None else prompt
    else:
        _need(args, "trajectory", "context_dir")
        traj = load_trajectory(args.trajectory)
        views = load_context_dir(args.context_dir)
        if len(views) != cfg.views:
            raise UsageError(f"model expects {cfg.views} context views, found {len(views)}")
        if views.pixels().shape[1:3] != (cfg.height, cfg.width):
            raise UsageError(f"context views must be {cfg.width}x{cfg.height}")
        feats = ToyEncoder(cfg.implicit_dim, cfg.implicit_grid, cfg.seed).encode(views)
        ctx = patchify(views.pixels().astype(np.float64), cfg.patch).to(dtype)
        fused = torch.as_tensor(fuse(feats), dtype=dtype)
    if traj.frame_count < cfg.frames:
        raise UsageError(f"trajectory has {traj.frame_count} frames, model needs {cfg.frames}")
    sub = Trajectory(tuple(traj[i] for i in frame_indices(traj.frame_count, cfg.frames)))
    video = sample(model, ctx, fused, camera_rows(sub, dtype), prompt or 0, args.steps, args.seed,
                   args.shift)
    os.makedirs(os.path.join(args.out, "frames"), exist_ok=True)
    write_run_config(args, args.out)
    save_tensor(os.path.join(args.out, "video.rten"), video)
    for i, frame in enumerate(video):
        write_png(os.path.join(args.out, "frames", f"frame_{i:04d}.png"), frame)
    save_trajectory(sub, os.path.join(args.out, "trajectory.json"))
    print(f"{video.shape[0]} frames -> {args.out}")
    return 0


# --- eval ---------------------------------------------------------------------------

def load_video(path: str) -> np.ndarray:
    """A video from a raw tensor file, a PNG, or a directory of PNG frames."""
    from .imageio import load_image, load_tensor, read_png

    if os.path.isdir(path):
        if os.path.exists(os.path.join(path, "video.rten")):
            return load_tensor(os.path.join(path, "video.rten")).astype(np.float64)
        sub = os.path.join(path, "frames") if os.path.isdir(os.path.join(path, "frames")) else path
        names = sorted(n for n in os.listdir(sub) if n.lower().endswith(".png"))
        if not names:
            raise FormatError(f"no PNG frames in {sub}")
        return np.stack([read_png(os.path.join(sub, n)) for n in names])
    if path.lower().endswith(".png"):
        return load_image(path)[None]
    arr = load_tensor(path).astype(np.float64)
    return arr[None] if arr.ndim == 3 else arr


def cmd_eval(args) -> int:
    from .geometry import Trajectory, load_trajectory
    from .metrics import evaluate
    from .model.training import frame_indices

    _need(args, "generated", "reference", "out")
    gen, ref = load_video(args.generated), load_video(args.reference)
    gt = load_trajectory(args.gen_traj) if args.gen_traj else None
    rt = load_trajectory(args.ref_traj) if args.ref_traj else None
    if args.match_frames and ref.shape[0] != gen.shape[0]:
        if ref.shape[0] < gen.shape[0]:
            raise UsageError("--match-frames needs the reference to have at least as many frames")
        idx = frame_indices(ref.shape[0], gen.shape[0])
        ref = ref[idx]
        if rt is not None and rt.frame_count != gen.shape[0]:
            rt = Trajectory(tuple(rt[i] for i in idx))
    report = evaluate(gen, ref, gt, rt, gaussian=args.gaussian)
    report.extra = {"generated": args.generated, "reference": args.reference,
                    "psnr_mode": "mean_of_frames", "ssim_window": "gaussian11" if args.gaussian else "uniform8"}
    os.makedirs(args.out, exist_ok=True)
    write_run_config(args, args.out)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(report.dumps())
    p = "inf" if math.isinf(report.psnr) else f"{report.psnr:.3f}"
    print(f"psnr {p} dB  ssim {report.ssim:.4f} -> {os.path.join(args.out, 'report.json')}")
    return 0


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .trajectory import DEFAULT_DISTANCE, DEFAULT_FRAMES, KINDS

    p = _Parser(prog="scenectx", description="Paired scene data, context-conditioned video generation and evaluation.",
                epilog="exit status: 0 success, 1 user error, 2 internal error")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    def common(sp, func):
        sp.add_argument("--out", help="output directory (created if missing)")
        sp.add_argument("--from-config", help="rerun from a run_config.json snapshot")
        sp.set_defaults(func=func)

    d = sub.add_parser("dataset", help="render paired with/without-subject videos")
    d.add_argument("--pairs", type=int, default=64, help="number of pairs (full scale: 46K)")
    d.add_argument("--scenes", type=int, default=8, help="distinct scene layouts cycled over pairs")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--frames", type=int, default=17, help="frames per video (full scale: 77)")
    d.add_argument("--width", type=int, default=32, help="multiple of 16")
    d.add_argument("--height", type=int, default=32, help="multiple of 16")
    d.add_argument("--pano-h", type=int, default=0, help="panorama height; 0 = max(128, 4*height)")
    d.add_argument("--quiet", action="store_true")
    common(d, cmd_dataset)

    pr = sub.add_parser("project", help="cut perspective context views out of a panorama")
    pr.add_argument("--panorama", help="equirectangular panorama (.png or .rten, 2:1)")
    pr.add_argument("--views", type=int, default=20, help="number of views, evenly spaced in yaw")
    pr.add_argument("--fov", type=float, default=90.0, help="horizontal field of view, degrees")
    pr.add_argument("--width", type=int, default=64)
    pr.add_argument("--height", type=int, default=64)
    pr.add_argument("--start-yaw", type=float, default=0.0)
    pr.add_argument("--pitch", type=float, default=0.0)
    pr.add_argument("--format", choices=("png", "rten"), default="png")
    common(pr, cmd_project)

    g = sub.add_parser("gen-traj", help="write a camera trajectory from the movement taxonomy")
    g.add_argument("--kind", choices=KINDS + ("random",), default="pan")
    g.add_argument("--direction", help="defaults to the first legal direction of --kind")
    g.add_argument("--magnitude", type=float, help="degrees for rotations, distance factor for moves")
    g.add_argument("--frames", type=int, default=DEFAULT_FRAMES)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--distance", type=float, default=DEFAULT_DISTANCE, help="camera-to-subject distance")
    g.add_argument("--jitter", action="store_true",
                   help="draw the start azimuth in [-45, 45] deg from --seed instead of facing the subject")
    common(g, cmd_gen_traj)

    t = sub.add_parser("train", help="train the context-conditioned transformer")
    t.add_argument("--dataset", help="directory written by 'dataset'")
    t.add_argument("--config", default="small", help=f"preset {sorted(PRESETS)} or model config JSON")
    t.add_argument("--steps", type=int, default=2000, help="optimizer steps (full scale: 10K)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--warmup", type=int, default=50)
    t.add_argument("--batch", type=int, default=4)
    t.add_argument("--sigma-shift", type=float, default=1.0)
    t.add_argument("--decay-steps", type=int, default=0)
    t.add_argument("--shuffle", choices=("on", "off"), default="on", help="shuffle context views 1..V-1")
    t.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    t.add_argument("--resume", help="continue from a checkpoint")
    t.add_argument("--ckpt-out", help="checkpoint path (default OUT/checkpoint.sckp)")
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--threads", type=int, default=1)
    t.add_argument("--quiet", action="store_true")
    common(t, cmd_train)

    s = sub.add_parser("sample", help="generate a video from a checkpoint")
    s.add_argument("--ckpt")
    s.add_argument("--trajectory", help="trajectory file; subsampled to the model's frame count")
    s.add_argument("--context-dir", help="directory written by 'project'")
    s.add_argument("--dataset", help="take context, trajectory and prompt from a dataset sample")
    s.add_argument("--index", type=int, default=0, help="sample index with --dataset")
    s.add_argument("--prompt-tag", type=int)
    s.add_argument("--steps", type=int, default=50, help="Euler steps")
    s.add_argument("--shift", type=float, default=1.0, help="sigma shift of the time grid")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    common(s, cmd_sample)

    e = sub.add_parser("eval", help="PSNR/SSIM and pose errors of a generated video")
    e.add_argument("--generated", help="video .rten, PNG frame directory, or 'sample' output")
    e.add_argument("--reference")
    e.add_argument("--gen-traj")
    e.add_argument("--ref-traj")
    e.add_argument("--match-frames", action="store_true",
                   help="subsample the reference to the generated frame count")
    e.add_argument("--gaussian", action="store_true", help="11x11 Gaussian SSIM window")
    common(e, cmd_eval)
    return p


def parse(argv, parser=None):
    parser = parser or build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required; see --help")
    if args.from_config:
        snap = _read_snapshot(args.from_config, args.command)
        sp = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        sp.set_defaults(**{k: v for k, v in snap.items() if k in known})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse(sys.argv[1:] if argv is None else argv)
        return args.func(args)
    except UsageError as exc:
        _log(f"error: {exc}")
        return 1
    except (SceneCtxError, OSError) as exc:
        _log(f"error: {exc}")
        return 1
    except KeyboardInterrupt:
        return 130
    except Exception:
        _log("internal error:\n" + traceback.format_exc())
        return 2


if __name__ == "__main__":
    sys.exit(main())
