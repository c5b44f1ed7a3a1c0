"""Batch command-line frontend.

Commands: synth | align-pose | smooth | fuse | fit | train | render | eval |
ddim-demo. Every option can come from a line-oriented `key = value` config
file (--config) with command-line flags taking precedence; unknown config
keys are rejected and every run echoes its resolved configuration.

Exit codes: 0 ok, 2 config error, 3 input error, 4 numerical failure.
Failures print a single machine-parsable line to stderr:
ERROR <CONFIG|INPUT|NUMERIC>: <message>.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .fitting import (
    FitSequence,
    FitWeights,
    fit,
    load_poses_jsonl,
    save_poses_jsonl,
    smooth_pose_sequence,
)
from .fusion import (
    convex_hull_mask,
    estimate_partial_affine,
    gate,
    load_landmarks_json,
    poisson_blend,
    procrustes_disparity,
    warp_affine,
)
from .metrics import psnr, ssim
from .pose import (
    apply_scales,
    compute_scales,
    load_skeletons_jsonl,
    momentum_smooth,
    savgol,
    save_skeletons_jsonl,
)
from .sched import convergence_experiment
from .splat import rasterize
from .synth import make_subject, read_dataset, render_sequence, write_dataset
from .trainer import (
    TrainConfig,
    load_checkpoint,
    pose_gaussians,
    train,
    write_checkpoint,
    write_loss_log,
)


class ConfigError(Exception):
    pass


@dataclass
class Option:
    name: str
    type: type
    default: object = None
    required: bool = False
    help: str = ""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config_file(path, options: dict[str, Option]) -> dict:
    values = {}
    for lineno, line in enumerate(Path(str(path)).read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in options:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        opt = options[key]
        try:
            values[key] = _parse_bool(raw) if opt.type is bool else opt.type(raw)
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def resolve_options(args: argparse.Namespace, options: dict[str, Option]) -> dict:
    values = {name: opt.default for name, opt in options.items()}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config, options))
    for name in options:
        flag_value = getattr(args, name.replace("-", "_"))
        if flag_value is not None:
            values[name] = flag_value
    for name, opt in options.items():
        if opt.required and values[name] is None:
            raise ConfigError(f"missing required option: {name}")
    return values


def echo_config(command: str, values: dict) -> None:
    for key in sorted(values):
        print(f"config {command}: {key} = {values[key]}")


def parse_indices(text: str | None, n_total: int) -> list[int]:
    """Comma list of indices and inclusive a-b ranges; empty means all."""
    if not text:
        return list(range(n_total))
    out = []
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            continue
        if "-" in piece:
            lo, _, hi = piece.partition("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(piece))
    for i in out:
        if not 0 <= i < n_total:
            raise ValueError(f"frame index {i} out of range (0..{n_total - 1})")
    return out


# ---------------------------------------------------------------- commands

SYNTH_OPTIONS = {
    "out": Option("out", str, required=True, help="output dataset directory"),
    "seed": Option("seed", int, 7),
    "frames": Option("frames", int, 40),
    "size": Option("size", int, 128),
}


def cmd_synth(values) -> int:
    subject = make_subject(values["seed"])
    frames = render_sequence(subject, n_frames=values["frames"], size=values["size"])
    write_dataset(values["out"], frames, subject.template)
    print(f"synth: wrote {len(frames)} frames to {values['out']}")
    return 0


ALIGN_OPTIONS = {
    "ref": Option("ref", str, required=True, help="reference skeleton jsonl"),
    "src": Option("src", str, required=True, help="source skeleton jsonl"),
    "out": Option("out", str, required=True),
    "per-frame": Option("per-frame", bool, False, help="recompute scales per frame"),
    "min-conf": Option("min-conf", float, 0.3),
}


def cmd_align_pose(values) -> int:
    ref = load_skeletons_jsonl(values["ref"])
    src = load_skeletons_jsonl(values["src"])
    if not ref or not src:
        raise ValueError("empty skeleton stream")
    aligned = []
    if values["per-frame"]:
        for i, s in enumerate(src):
            scales = compute_scales(ref[min(i, len(ref) - 1)], s, values["min-conf"])
            aligned.append(apply_scales(s, scales))
    else:
        scales = compute_scales(ref[0], src[0], values["min-conf"])
        for part, value in sorted(scales.as_dict().items()):
            flag = " (fallback)" if part in scales.fallback_parts else ""
            print(f"align-pose: scale {part} = {value}{flag}")
        aligned = [apply_scales(s, scales) for s in src]
    save_skeletons_jsonl(values["out"], aligned)
    print(f"align-pose: wrote {len(aligned)} skeletons to {values['out']}")
    return 0


SMOOTH_OPTIONS = {
    "in": Option("in", str, required=True, help="input jsonl stream"),
    "out": Option("out", str, required=True),
    "kind": Option("kind", str, "params", help="params or keypoints"),
    "window": Option("window", int, 9),
    "order": Option("order", int, 2),
    "momentum": Option("momentum", float, 0.0, help="0 disables momentum smoothing"),
}


def cmd_smooth(values) -> int:
    momentum = values["momentum"] if values["momentum"] > 0 else None
    if values["kind"] == "params":
        poses = load_poses_jsonl(values["in"])
        if len(poses) >= 2:
            poses = smooth_pose_sequence(poses, values["window"], values["order"])
            if momentum:
                trans = momentum_smooth(np.stack([p.root_translation for p in poses]), momentum)
                shape = momentum_smooth(np.stack([p.shape for p in poses]), momentum)
                for i, p in enumerate(poses):
                    p.root_translation = trans[i]
                    p.shape = shape[i]
        save_poses_jsonl(values["out"], poses)
        print(f"smooth: wrote {len(poses)} poses to {values['out']}")
    elif values["kind"] == "keypoints":
        skels = load_skeletons_jsonl(values["in"])
        if len(skels) >= 2:
            coords = np.stack([s.keypoints for s in skels])  # (T, 17, 3)
            for k in range(coords.shape[1]):
                for d in range(2):
                    series = savgol(coords[:, k, d], values["window"], values["order"])
                    if momentum:
                        series = momentum_smooth(series, momentum)
                    coords[:, k, d] = series
            for i, s in enumerate(skels):
                s.keypoints = coords[i]
        save_skeletons_jsonl(values["out"], skels)
        print(f"smooth: wrote {len(skels)} skeletons to {values['out']}")
    else:
        raise ConfigError(f"unknown kind {values['kind']!r} (use params or keypoints)")
    return 0


FUSE_OPTIONS = {
    "src": Option("src", str, required=True, help="source image (content to paste)"),
    "dst": Option("dst", str, required=True, help="destination image"),
    "landmarks-src": Option("landmarks-src", str, required=True),
    "landmarks-dst": Option("landmarks-dst", str, required=True),
    "threshold": Option("threshold", float, 0.01),
    "out": Option("out", str, required=True),
}


def cmd_fuse(values) -> int:
    src = fileio.load_image_png(values["src"])
    dst = fileio.load_image_png(values["dst"])
    lm_src = load_landmarks_json(values["landmarks-src"])
    lm_dst = load_landmarks_json(values["landmarks-dst"])
    disparity = procrustes_disparity(lm_dst, lm_src)
    print(f"fuse: procrustes disparity = {disparity}")
    if not gate(disparity, values["threshold"]):
        fileio.save_image_png(values["out"], dst)
        print("fuse: skipped (disparity at or above threshold); wrote destination copy")
        return 0
    m = estimate_partial_affine(lm_src, lm_dst)
    h, w = dst.shape[:2]
    warped = warp_affine(src, m, (w, h))
    mask = convex_hull_mask(lm_dst, (w, h))
    if not mask.any():
        raise ValueError("degenerate landmark hull: empty fusion mask")
    fused = poisson_blend(warped, dst, mask)
    fileio.save_image_png(values["out"], fused)
    print(f"fuse: blended {int(mask.sum())} pixels into {values['out']}")
    return 0


FIT_OPTIONS = {
    "dataset": Option("dataset", str, required=True),
    "out": Option("out", str, required=True, help="fitted parameters jsonl"),
    "indices": Option("indices", str, ""),
    "lam-kpt": Option("lam-kpt", float, 1.0),
    "lam-reg": Option("lam-reg", float, 0.001),
    "lam-temp": Option("lam-temp", float, 0.1),
    "stage1-iters": Option("stage1-iters", int, 100),
    "stage2-iters": Option("stage2-iters", int, 200),
    "lr": Option("lr", float, 1e-3),
    "no-smooth": Option("no-smooth", bool, False),
}


def cmd_fit(values) -> int:
    ds = read_dataset(values["dataset"])
    idx = parse_indices(values["indices"], len(ds))
    seq = FitSequence([ds.skeletons[i] for i in idx], ds.frames[idx[0]].camera)
    weights = FitWeights(values["lam-kpt"], values["lam-reg"], values["lam-temp"],
                         values["stage1-iters"], values["stage2-iters"], values["lr"])
    result = fit(seq, ds.template, weights, smooth=not values["no-smooth"])
    save_poses_jsonl(values["out"], result.poses)
    print(f"fit: final loss = {result.final_loss} "
          f"(kpt={result.parts['kpt']}, reg={result.parts['reg']}, temp={result.parts['temp']})")
    print(f"fit: wrote {len(result.poses)} frames to {values['out']}")
    return 0


TRAIN_OPTIONS = {
    "dataset": Option("dataset", str, required=True),
    "out": Option("out", str, required=True, help="checkpoint path"),
    "log": Option("log", str, None, help="loss CSV path (default: <out>.loss.csv)"),
    "indices": Option("indices", str, ""),
    "iterations": Option("iterations", int, None,
                         help="default: 5 x frame count (5 epochs at batch size 1)"),
    "seed": Option("seed", int, 0),
    "lam-rgb": Option("lam-rgb", float, 0.8),
    "lam-ssim": Option("lam-ssim", float, 0.2),
    "lam-perc": Option("lam-perc", float, 0.2),
}


def cmd_train(values) -> int:
    ds = read_dataset(values["dataset"])
    idx = parse_indices(values["indices"], len(ds))
    frames = [ds.frames[i] for i in idx]
    config = TrainConfig(lam_rgb=values["lam-rgb"], lam_ssim=values["lam-ssim"],
                         lam_perc=values["lam-perc"], iterations=values["iterations"],
                         seed=values["seed"])
    result = train(frames, ds.template, config)
    write_checkpoint(values["out"], result)
    log_path = values["log"] or (str(values["out"]) + ".loss.csv")
    write_loss_log(log_path, result.log)
    final = result.log[-1][1] if result.log else float("nan")
    print(f"train: {len(result.log)} iterations on {len(frames)} frames, "
          f"final loss = {final}, n_gaussians = {len(result.gaussians)}")
    print(f"train: wrote checkpoint {values['out']} and log {log_path}")
    return 0


RENDER_OPTIONS = {
    "checkpoint": Option("checkpoint", str, required=True),
    "dataset": Option("dataset", str, required=True,
                      help="dataset supplying template, cameras, and poses"),
    "out": Option("out", str, required=True, help="output directory"),
    "indices": Option("indices", str, ""),
    "sh-degree": Option("sh-degree", int, 3),
}


def cmd_render(values) -> int:
    g, bindings, net, _ = load_checkpoint(values["checkpoint"])
    ds = read_dataset(values["dataset"])
    idx = parse_indices(values["indices"], len(ds))
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    for i in idx:
        frame = ds.frames[i]
        posed, _, _ = pose_gaussians(g, bindings, ds.template, frame.pose, net)
        image = rasterize(posed, frame.camera, values["sh-degree"])
        fileio.save_image_png(out / f"{i:04d}.png", image)
    print(f"render: wrote {len(idx)} views to {out}")
    return 0


EVAL_OPTIONS = {
    "pred": Option("pred", str, required=True, help="directory of NNNN.png renders"),
    "dataset": Option("dataset", str, required=True, help="ground-truth dataset"),
    "out": Option("out", str, required=True, help="metrics CSV"),
    "indices": Option("indices", str, ""),
}


def cmd_eval(values) -> int:
    ds = read_dataset(values["dataset"])
    pred_dir = Path(values["pred"])
    idx = parse_indices(values["indices"], len(ds))
    rows = []
    for i in idx:
        path = pred_dir / f"{i:04d}.png"
        if not path.exists():
            raise FileNotFoundError(f"missing prediction {path}")
        pred = fileio.load_image_png(path)
        gt = ds.frames[i].image
        rows.append((i, psnr(pred, gt), ssim(pred, gt)))
    lines = ["frame,psnr,ssim"]
    for i, p, s in rows:
        lines.append(f"{i},{p!r},{s!r}")
    mean_p = float(np.mean([p for _, p, _ in rows]))
    mean_s = float(np.mean([s for _, _, s in rows]))
    lines.append(f"mean,{mean_p!r},{mean_s!r}")
    Path(values["out"]).write_text("\n".join(lines) + "\n")
    print(f"eval: mean psnr = {mean_p}, mean ssim = {mean_s} over {len(rows)} frames")
    return 0


DDIM_OPTIONS = {
    "out": Option("out", str, required=True, help="convergence CSV"),
    "steps": Option("steps", str, "10,20,50", help="comma list of step counts"),
    "seed": Option("seed", int, 0),
    "samples": Option("samples", int, 64),
}


def cmd_ddim_demo(values) -> int:
    steps_list = [int(s) for s in values["steps"].split(",") if s.strip()]
    if not steps_list:
        raise ConfigError("steps list is empty")
    rows = convergence_experiment(steps_list, seed=values["seed"],
                                  n_samples=values["samples"])
    lines = ["steps,error"] + [f"{steps},{err!r}" for steps, err in rows]
    Path(values["out"]).write_text("\n".join(lines) + "\n")
    for steps, err in rows:
        print(f"ddim-demo: steps={steps} error={err}")
    return 0


COMMANDS = {
    "synth": (SYNTH_OPTIONS, cmd_synth, "generate an oracle dataset"),
    "align-pose": (ALIGN_OPTIONS, cmd_align_pose, "rescale a pose stream to a reference body"),
    "smooth": (SMOOTH_OPTIONS, cmd_smooth, "temporally smooth keypoints or fitted parameters"),
    "fuse": (FUSE_OPTIONS, cmd_fuse, "gate, align, and Poisson-blend a face region"),
    "fit": (FIT_OPTIONS, cmd_fit, "fit body parameters to 2D keypoints"),
    "train": (TRAIN_OPTIONS, cmd_train, "train a splat avatar on a dataset"),
    "render": (RENDER_OPTIONS, cmd_render, "render checkpoint views"),
    "eval": (EVAL_OPTIONS, cmd_eval, "PSNR/SSIM of renders against ground truth"),
    "ddim-demo": (DDIM_OPTIONS, cmd_ddim_demo, "scheduler convergence experiment"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deskavatar",
                                     description="desk-scale avatar pipeline tools")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (options, _, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file")
        for opt in options.values():
            flag = f"--{opt.name}"
            dest = opt.name.replace("-", "_")
            if opt.type is bool:
                p.add_argument(flag, dest=dest, action="store_const", const=True,
                               default=None, help=opt.help)
            else:
                p.add_argument(flag, dest=dest, type=opt.type, default=None,
                               help=opt.help)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    options, runner, _ = COMMANDS[args.command]
    try:
        values = resolve_options(args, options)
        echo_config(args.command, values)
        return runner(values)
    except ConfigError as exc:
        print(f"ERROR CONFIG: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"ERROR INPUT: {exc}", file=sys.stderr)
        return 3
    except (RuntimeError, FloatingPointError, OverflowError) as exc:
        print(f"ERROR NUMERIC: {exc}", file=sys.stderr)
        return 4


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
