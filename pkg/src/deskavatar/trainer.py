"""Gaussian-avatar training: multi-term loss, parameter-group Adam,
positional LR decay, densify/prune schedule, and the SH-degree curriculum.

The trained state is a canonical GaussianSet bound per splat to a template
vertex (for skinning weights and offset lookup) plus the pose-offset
network. Posing applies the binding vertex's blended transform to the
splat's own canonical position and adds the network offset, all in posed
space. Training is single threaded and deterministic under the config seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .avatar import BodyTemplate, OffsetNet, PoseParams, forward_kinematics, skin_blend
from .metrics import SSIM_WINDOW, ssim_with_grad
from .splat import Camera, GaussianSet, rasterize, rasterize_backward, sigmoid


@dataclass
class TrainConfig:
    lam_rgb: float = 0.8
    lam_ssim: float = 0.2
    lam_perc: float = 0.2
    lr_position_init: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_position_max_steps: int = 30000
    lr_opacity: float = 0.05
    lr_scale: float = 0.005
    lr_feature: float = 0.0025
    net_lr: float = 1e-3
    densify_start: int = 500
    densify_end: int = 15000
    densify_interval: int = 100
    prune_opacity: float = 0.005
    densify_grad_threshold: float = 2e-4
    sh_degree_max: int = 3
    # None maps the 5-epoch/batch-1 convention to 5 * frame count
    iterations: int | None = None
    seed: int = 0

    def validate(self) -> None:
        rates = (self.lr_position_init, self.lr_position_final, self.lr_opacity,
                 self.lr_scale, self.lr_feature, self.net_lr)
        if any(r <= 0 for r in rates):
            raise ValueError("all learning rates must be positive")
        if self.densify_start >= self.densify_end:
            raise ValueError("densify_start must precede densify_end")


@dataclass
class FrameSample:
    image: np.ndarray   # (H, W, 3)
    mask: np.ndarray    # (H, W) bool
    camera: Camera
    pose: PoseParams

    def validate(self) -> None:
        w, h = self.camera.size
        if self.image.shape[:2] != (h, w) or self.mask.shape != (h, w):
            raise ValueError("image/mask size must match the camera")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, arr: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(arr, dtype=float), np.zeros_like(arr, dtype=float))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Standard bias-corrected Adam; mutates the state, returns new params."""
    grads = np.asarray(grads, dtype=float)
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), state


def position_lr(t: int, init: float = 1.6e-4, final: float = 1.6e-6,
                t_max: int = 30000) -> float:
    """Linear blend from init to final, clamped to final past t_max."""
    if t < 0:
        raise ValueError("iteration must be nonnegative")
    if t >= t_max:
        return final
    frac = t / t_max
    return init * (1.0 - frac) + final * frac


def sh_schedule(t: int, iterations: int) -> int:
    """Active SH degree: 0 at the start, 3 by the end, monotone."""
    if t < 0:
        raise ValueError("iteration must be nonnegative")
    if iterations <= 0:
        return 0
    return int(min(3, (4 * t) // iterations))


def pooled_l1(render: np.ndarray, target: np.ndarray, mask: np.ndarray):
    """Default perceptual stub: L1 between 4x average-pooled masked images."""
    m = np.asarray(mask, dtype=float)[:, :, None]
    h, w = render.shape[:2]
    h4, w4 = (h // 4) * 4, (w // 4) * 4
    if h4 == 0 or w4 == 0:
        return 0.0, np.zeros_like(render)
    def pool(img):
        x = (img * m)[:h4, :w4]
        return x.reshape(h4 // 4, 4, w4 // 4, 4, 3).mean(axis=(1, 3))
    pr = pool(render)
    pt = pool(target)
    diff = pr - pt
    value = float(np.abs(diff).mean())
    sign_up = np.repeat(np.repeat(np.sign(diff), 4, axis=0), 4, axis=1)
    grad = np.zeros_like(render)
    grad[:h4, :w4] = sign_up / (16.0 * diff.size)
    grad *= m
    return value, grad


def _mask_bbox(mask: np.ndarray, min_side: int, shape) -> tuple[int, int, int, int] | None:
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return None
    h, w = shape
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    def expand(lo, hi, limit):
        while hi - lo < min_side:
            if lo > 0:
                lo -= 1
            elif hi < limit:
                hi += 1
            else:
                break
        return lo, hi
    y0, y1 = expand(y0, y1, h)
    x0, x1 = expand(x0, x1, w)
    return y0, y1, x0, x1


def total_loss(render: np.ndarray, target: np.ndarray, mask: np.ndarray,
               perceptual=None, lam_rgb: float = 0.8, lam_ssim: float = 0.2,
               lam_perc: float = 0.2):
    """Masked L1 + (1 - SSIM on the mask bounding box) + perceptual term.

    Returns (loss, d loss / d render, parts dict). Background pixels are
    excluded from the L1 and perceptual terms; SSIM runs on the mask's
    bounding box crop (expanded to the SSIM window if needed).
    """
    render = np.asarray(render, dtype=float)
    target = np.asarray(target, dtype=float)
    mask_f = np.asarray(mask, dtype=float)
    if render.shape != target.shape or mask_f.shape != render.shape[:2]:
        raise ValueError("render/target/mask sizes disagree")
    if perceptual is None:
        perceptual = pooled_l1
    grad = np.zeros_like(render)

    n_mask = mask_f.sum()
    if n_mask > 0:
        diff = (render - target) * mask_f[:, :, None]
        rgb_val = float(np.abs(diff).sum() / (3.0 * n_mask))
        grad += lam_rgb * np.sign(diff) * mask_f[:, :, None] / (3.0 * n_mask)
    else:
        rgb_val = 0.0

    ssim_val = 1.0
    bbox = _mask_bbox(mask_f > 0, SSIM_WINDOW, render.shape[:2])
    if bbox is not None:
        y0, y1, x0, x1 = bbox
        if y1 - y0 >= SSIM_WINDOW and x1 - x0 >= SSIM_WINDOW:
            ssim_val, ssim_grad = ssim_with_grad(render[y0:y1, x0:x1], target[y0:y1, x0:x1])
            grad[y0:y1, x0:x1] -= lam_ssim * ssim_grad

    perc_val, perc_grad = perceptual(render, target, mask_f)
    grad += lam_perc * perc_grad

    loss = lam_rgb * rgb_val + lam_ssim * (1.0 - ssim_val) + lam_perc * perc_val
    parts = {"rgb": rgb_val, "ssim": 1.0 - ssim_val, "perceptual": perc_val}
    return loss, grad, parts


@dataclass
class DensifyInfo:
    keep_indices: np.ndarray   # original indices that survive pruning
    clone_indices: np.ndarray  # original indices cloned (appended in order)


def densify_and_prune(g: GaussianSet, accum_pos_grads: np.ndarray, t: int,
                      config: TrainConfig) -> tuple[GaussianSet, DensifyInfo]:
    """Prune near-transparent splats, then clone splats whose accumulated
    positional gradient exceeds the threshold, offset one std along it."""
    if not (config.densify_start <= t <= config.densify_end
            and t % config.densify_interval == 0):
        raise ValueError("densify called outside its schedule")
    accum = np.asarray(accum_pos_grads, dtype=float).reshape(len(g), 3)
    opac = sigmoid(g.opacity_logits)
    keep = np.nonzero(opac >= config.prune_opacity)[0]
    norms = np.linalg.norm(accum[keep], axis=1)
    clone_local = np.nonzero(norms > config.densify_grad_threshold)[0]
    clone = keep[clone_local]
    dirs = accum[clone]
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    new_positions = g.positions[clone] + np.exp(g.log_scales[clone])[:, None] * dirs
    out = GaussianSet(
        np.concatenate([g.positions[keep], new_positions], axis=0),
        np.concatenate([g.log_scales[keep], g.log_scales[clone]]),
        np.concatenate([g.sh_coeffs[keep], g.sh_coeffs[clone]], axis=0),
        np.concatenate([g.opacity_logits[keep], g.opacity_logits[clone]]),
    )
    return out, DensifyInfo(keep, clone)


def mean_edge_length_per_vertex(template: BodyTemplate) -> np.ndarray:
    v = template.canonical_vertices
    e = template.edges
    lengths = np.linalg.norm(v[e[:, 0]] - v[e[:, 1]], axis=1)
    total = np.zeros(len(v))
    count = np.zeros(len(v))
    np.add.at(total, e[:, 0], lengths)
    np.add.at(total, e[:, 1], lengths)
    np.add.at(count, e[:, 0], 1.0)
    np.add.at(count, e[:, 1], 1.0)
    count[count == 0] = 1.0
    return total / count


def init_gaussians(template: BodyTemplate) -> GaussianSet:
    """Splats at the template vertices: mid-gray, opacity 0.1, stds at half
    the local edge length."""
    n = template.n_vertices
    scales = 0.5 * mean_edge_length_per_vertex(template)
    return GaussianSet(
        template.canonical_vertices.copy(),
        np.log(np.clip(scales, 1e-4, None)),
        np.zeros((n, 16, 3)),
        np.full(n, np.log(0.1 / 0.9)),
    )


def pose_gaussians(g: GaussianSet, bindings: np.ndarray, template: BodyTemplate,
                   pose: PoseParams, net: OffsetNet | None = None):
    """Posed copy of the canonical set plus the skinning cache for gradients.

    Returns (posed set, blend matrices per splat, network cache or None).
    """
    fk = forward_kinematics(template, pose)
    A, b = skin_blend(template, fk)
    Ab = A[bindings]
    posed = np.einsum("nab,nb->na", Ab, g.positions) + b[bindings]
    net_cache = None
    if net is not None:
        offsets, net_cache = net.forward_cache(pose.joint_rotations)
        posed = posed + offsets[bindings]
    posed_set = GaussianSet(posed, g.log_scales.copy(), g.sh_coeffs.copy(),
                            g.opacity_logits.copy())
    return posed_set, Ab, net_cache


@dataclass
class TrainResult:
    gaussians: GaussianSet
    bindings: np.ndarray
    net: OffsetNet
    log: list
    config: TrainConfig


LOG_COLUMNS = ("iteration", "total", "rgb", "ssim", "perceptual", "n_gaussians", "sh_degree")


def train(frames: list[FrameSample], template: BodyTemplate, config: TrainConfig,
          perceptual=None, on_densify=None) -> TrainResult:
    """Optimize splats + offset net on the frame set; deterministic per seed."""
    config.validate()
    if not frames:
        raise ValueError("need at least one training frame")
    for f in frames:
        f.validate()
    iterations = 5 * len(frames) if config.iterations is None else config.iterations
    rng = np.random.default_rng(config.seed)
    g = init_gaussians(template)
    bindings = np.arange(len(g))
    net = OffsetNet.init(template.n_joints, template.n_vertices, seed=config.seed)
    net_flat = net.to_flat()

    states = {
        "positions": AdamState.like(g.positions),
        "log_scales": AdamState.like(g.log_scales),
        "sh": AdamState.like(g.sh_coeffs),
        "opacity": AdamState.like(g.opacity_logits),
        "net": AdamState.like(net_flat),
    }
    accum_grad = np.zeros_like(g.positions)
    accum_count = 0
    log = []

    for t in range(iterations):
        frame = frames[int(rng.integers(0, len(frames)))]
        degree = min(sh_schedule(t, iterations), config.sh_degree_max)

        posed, Ab, net_cache = pose_gaussians(g, bindings, template, frame.pose, net)
        image = rasterize(posed, frame.camera, degree)
        loss, grad_img, parts = total_loss(
            image, frame.image, frame.mask, perceptual,
            config.lam_rgb, config.lam_ssim, config.lam_perc)
        if not np.isfinite(loss):
            raise RuntimeError(
                f"non-finite loss {loss} at iteration {t} "
                f"(rgb={parts['rgb']}, ssim={parts['ssim']}, perc={parts['perceptual']})")

        grads = rasterize_backward(posed, frame.camera, degree, grad_img)
        grad_canonical = np.einsum("nab,na->nb", Ab, grads.positions)
        grad_offsets = np.zeros((template.n_vertices, 3))
        np.add.at(grad_offsets, bindings, grads.positions)
        net_grad = net.backward(net_cache, grad_offsets)

        lr_pos = position_lr(t, config.lr_position_init, config.lr_position_final,
                             config.lr_position_max_steps)
        g.positions, _ = adam_step(g.positions, grad_canonical, states["positions"], lr_pos)
        g.log_scales, _ = adam_step(g.log_scales, grads.log_scales, states["log_scales"], config.lr_scale)
        g.sh_coeffs, _ = adam_step(g.sh_coeffs, grads.sh_coeffs, states["sh"], config.lr_feature)
        g.opacity_logits, _ = adam_step(g.opacity_logits, grads.opacity_logits,
                                        states["opacity"], config.lr_opacity)
        net_flat, _ = adam_step(net_flat, net_grad, states["net"], config.net_lr)
        net.from_flat(net_flat)

        accum_grad += grad_canonical
        accum_count += 1

        if (t > 0 and config.densify_start <= t <= config.densify_end
                and t % config.densify_interval == 0):
            mean_grad = accum_grad / accum_count
            g, info = densify_and_prune(g, mean_grad, t, config)
            keep, clone = info.keep_indices, info.clone_indices
            bindings = np.concatenate([bindings[keep], bindings[clone]])
            for name in ("positions", "log_scales", "sh", "opacity"):
                st = states[name]
                zeros_shape = (len(clone),) + st.m.shape[1:]
                st.m = np.concatenate([st.m[keep], np.zeros(zeros_shape)], axis=0)
                st.v = np.concatenate([st.v[keep], np.zeros(zeros_shape)], axis=0)
            accum_grad = np.zeros_like(g.positions)
            accum_count = 0
            if on_densify is not None:
                on_densify(t, g)

        log.append((t, loss, parts["rgb"], parts["ssim"], parts["perceptual"],
                    len(g), degree))
    return TrainResult(g, bindings, net, log, config)


def write_loss_log(path, log) -> None:
    lines = [",".join(LOG_COLUMNS)]
    for row in log:
        t, total, rgb, ssim_term, perc, n, deg = row
        lines.append(f"{t},{total!r},{rgb!r},{ssim_term!r},{perc!r},{n},{deg}")
    Path(str(path)).write_text("\n".join(lines) + "\n")


_BIND_MAGIC = b"BIND"
_NET_MAGIC = b"ONET"
_CONF_MAGIC = b"CONF"


def write_checkpoint(path, result: TrainResult) -> None:
    """GSAV gaussian block, per-splat vertex bindings, offset-net weights,
    and a JSON echo of the training config."""
    parts = [fileio.gaussians_to_bytes(result.gaussians)]
    parts.append(_BIND_MAGIC)
    parts.append(struct.pack("<Q", len(result.bindings)))
    parts.append(np.ascontiguousarray(result.bindings, dtype="<i8").tobytes())
    flat = result.net.to_flat()
    in_dim, hidden, n_verts = result.net.layer_dims
    parts.append(_NET_MAGIC)
    parts.append(struct.pack("<III", in_dim, hidden, n_verts))
    parts.append(struct.pack("<Q", flat.size))
    parts.append(np.ascontiguousarray(flat, dtype="<f4").tobytes())
    conf = json.dumps(asdict(result.config), sort_keys=True).encode()
    parts.append(_CONF_MAGIC)
    parts.append(struct.pack("<Q", len(conf)))
    parts.append(conf)
    Path(str(path)).write_bytes(b"".join(parts))


def load_checkpoint(path):
    """Returns (gaussians, bindings, net, config dict)."""
    raw = Path(str(path)).read_bytes()
    g, off = fileio.gaussians_from_bytes(raw)
    if raw[off:off + 4] != _BIND_MAGIC:
        raise ValueError("checkpoint missing binding block")
    (n,) = struct.unpack_from("<Q", raw, off + 4)
    off += 12
    bindings = np.frombuffer(raw, dtype="<i8", count=n, offset=off).astype(int)
    off += 8 * n
    if raw[off:off + 4] != _NET_MAGIC:
        raise ValueError("checkpoint missing offset-net block")
    in_dim, hidden, n_verts = struct.unpack_from("<III", raw, off + 4)
    (n_w,) = struct.unpack_from("<Q", raw, off + 16)
    off += 24
    flat = np.frombuffer(raw, dtype="<f4", count=n_w, offset=off).astype(float)
    off += 4 * n_w
    net = OffsetNet.init(in_dim // 3, n_verts, seed=0, hidden=hidden)
    net.from_flat(flat)
    if raw[off:off + 4] != _CONF_MAGIC:
        raise ValueError("checkpoint missing config block")
    (n_c,) = struct.unpack_from("<Q", raw, off + 4)
    off += 12
    config = json.loads(raw[off:off + n_c].decode())
    return g, bindings, net, config
