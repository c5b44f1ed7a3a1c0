"""Procedural ground-truth oracle: textured capsule subjects rendered as
turntable sequences with exact masks, keypoints, and depth.

Ground truth reuses the splat renderer (one small opaque Gaussian per
template vertex), so training and oracle share a single rendering path.
Dataset directory layout:

    frames/NNNN.png  masks/NNNN.png  depth/NNNN.png
    poses.jsonl  keypoints.jsonl  cameras.jsonl  template.mesh
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import fileio
from .avatar import BodyTemplate, PoseParams, forward_kinematics, skin_vertices
from .body import J as JOINT_INDEX
from .body import build_capsule_template, load_template, save_template
from .fitting import JOINT_KEYPOINT_MAP, project_joints
from .pose import N_KEYPOINTS, Skeleton2D
from .splat import Camera, GaussianSet, rasterize_with_aux
from .trainer import FrameSample, mean_edge_length_per_vertex

_SH_DC = 0.28209479177387814

# face auxiliary keypoints: offsets from the head joint in its local frame
# (body faces +z at zero pose); keypoint indices 14 (r_eye), 15 (l_eye),
# 16 (face_aux)
_FACE_AUX_OFFSETS = {
    14: np.array([-0.035, 0.035, 0.075]),
    15: np.array([0.035, 0.035, 0.075]),
    16: np.array([0.0, 0.09, 0.05]),
}

DEFAULT_FRAMES = 189
OPAQUE_LOGIT = 6.0  # sigmoid ~ 0.9975, "small opaque" oracle splats


@dataclass
class SyntheticSubject:
    template: BodyTemplate
    albedo: np.ndarray  # (N, 3) in [0, 1]
    seed: int


def make_subject(seed: int) -> SyntheticSubject:
    """Deterministic subject: the capsule body with a smooth seeded albedo."""
    template = build_capsule_template()
    rng = np.random.default_rng(seed)
    v = template.canonical_vertices
    albedo = np.empty((len(v), 3))
    base = rng.uniform(0.25, 0.75, 3)
    for c in range(3):
        freq = rng.uniform(1.0, 3.0, 3)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        albedo[:, c] = base[c] + 0.25 * np.sin(v @ freq * 2.0 * np.pi / 3.0 + phase)
    return SyntheticSubject(template, np.clip(albedo, 0.05, 0.95), seed)


def subject_gaussians(subject: SyntheticSubject) -> GaussianSet:
    """One small opaque Gaussian per template vertex, DC color = albedo."""
    t = subject.template
    n = t.n_vertices
    scales = 0.55 * mean_edge_length_per_vertex(t)
    sh = np.zeros((n, 16, 3))
    sh[:, 0, :] = (subject.albedo - 0.5) / _SH_DC
    return GaussianSet(t.canonical_vertices.copy(), np.log(scales), sh,
                       np.full(n, OPAQUE_LOGIT))


def turntable_pose(angle: float, n_joints: int) -> PoseParams:
    """Root yaw by `angle` radians; the rest pose already has the arms
    extended horizontally. Angles wrap modulo 2 pi so full revolutions
    reproduce frame 0 exactly."""
    pose = PoseParams.zero(n_joints)
    pose.joint_rotations[0] = [0.0, float(angle) % (2.0 * np.pi), 0.0]
    return pose


def default_camera(size: int = 128, distance: float = 2.6) -> Camera:
    """Static camera on +z looking at the body center, y-down pixels."""
    f = 1.25 * size
    c = (size - 1) / 2.0
    rot = np.diag([1.0, -1.0, -1.0])
    center = np.array([0.0, -0.10, distance])
    return Camera((f, f), (c, c), rot, -rot @ center, (size, size))


def emit_skeleton(pose: PoseParams, template: BodyTemplate, cam: Camera) -> Skeleton2D:
    """Exact projections of the mapped joints plus head-attached face points."""
    proj = project_joints(pose, template, cam)
    kps = np.zeros((N_KEYPOINTS, 3))
    for j, k in JOINT_KEYPOINT_MAP:
        kps[k, :2] = proj[j]
        kps[k, 2] = 1.0
    fk = forward_kinematics(template, pose)
    head = JOINT_INDEX["head"]
    fx, fy = cam.focal
    cx, cy = cam.principal
    for k, offset in _FACE_AUX_OFFSETS.items():
        world = fk.rotations[head] @ (fk.rest[head] + offset) + fk.translations[head]
        p = cam.world_to_cam(world[None, :])[0]
        kps[k] = [fx * p[0] / p[2] + cx, fy * p[1] / p[2] + cy, 1.0]
    return Skeleton2D(kps)


@dataclass
class FrameRecord:
    image: np.ndarray
    mask: np.ndarray
    depth: np.ndarray
    camera: Camera
    pose: PoseParams
    skeleton: Skeleton2D


def render_frame(subject: SyntheticSubject, pose: PoseParams, cam: Camera) -> FrameRecord:
    t = subject.template
    g = subject_gaussians(subject)
    fk = forward_kinematics(t, pose)
    posed = GaussianSet(skin_vertices(t, fk), g.log_scales, g.sh_coeffs, g.opacity_logits)
    image, coverage, depth = rasterize_with_aux(posed, cam, 0)
    mask = coverage > 0.0
    return FrameRecord(image, mask, depth, cam, pose, emit_skeleton(pose, t, cam))


def render_sequence(subject: SyntheticSubject, n_frames: int = DEFAULT_FRAMES,
                    size: int = 128) -> list[FrameRecord]:
    """Full 360-degree turntable, one revolution over n_frames."""
    if n_frames < 1:
        raise ValueError("need at least one frame")
    cam = default_camera(size)
    frames = []
    for i in range(n_frames):
        pose = turntable_pose(2.0 * np.pi * i / n_frames, subject.template.n_joints)
        frames.append(render_frame(subject, pose, cam))
    return frames


def corrupt(img: np.ndarray, kind: str, seed: int, strength: float = 0.05,
            mask: np.ndarray | None = None) -> np.ndarray:
    """Deterministic degradations for fusion/restoration tests.

    blur: Gaussian filter of sigma=strength (pixels). noise: additive
    Gaussian of std=strength, clipped. region-replace: masked pixels swapped
    for seeded uniform noise.
    """
    img = np.asarray(img, dtype=float)
    if strength == 0.0:
        return img.copy()
    rng = np.random.default_rng(seed)
    if kind == "blur":
        out = np.stack([gaussian_filter(img[:, :, c], strength) for c in range(img.shape[2])], axis=2) \
            if img.ndim == 3 else gaussian_filter(img, strength)
        return np.clip(out, 0.0, 1.0)
    if kind == "noise":
        return np.clip(img + rng.normal(0.0, strength, img.shape), 0.0, 1.0)
    if kind == "region-replace":
        if mask is None:
            raise ValueError("region-replace needs a mask")
        noise = rng.uniform(0.0, 1.0, img.shape)
        m = np.asarray(mask, dtype=bool)
        if img.ndim == 3:
            m = m[:, :, None]
        return np.where(m, noise, img)
    raise ValueError(f"unknown corruption kind: {kind}")


def _camera_record(cam: Camera) -> dict:
    return {
        "focal": list(cam.focal),
        "principal": list(cam.principal),
        "rotation": cam.rotation.tolist(),
        "translation": cam.translation.tolist(),
        "size": list(cam.size),
    }


def _camera_from_record(rec: dict) -> Camera:
    return Camera(tuple(rec["focal"]), tuple(rec["principal"]),
                  np.array(rec["rotation"]), np.array(rec["translation"]),
                  tuple(rec["size"]))


def write_dataset(out_dir, frames: list[FrameRecord], template: BodyTemplate) -> None:
    out = Path(str(out_dir))
    for sub in ("frames", "masks", "depth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    poses, kps, cams = [], [], []
    for i, fr in enumerate(frames):
        name = f"{i:04d}.png"
        fileio.save_image_png(out / "frames" / name, fr.image)
        fileio.save_mask_png(out / "masks" / name, fr.mask)
        fileio.save_depth_png(out / "depth" / name, fr.depth)
        poses.append(json.dumps({
            "frame": i,
            "joint_rotations": fr.pose.joint_rotations.tolist(),
            "root_translation": fr.pose.root_translation.tolist(),
            "shape": fr.pose.shape.tolist(),
        }))
        kps.append(json.dumps({"frame": i, "keypoints": fr.skeleton.keypoints.tolist()}))
        cams.append(json.dumps({"frame": i, **_camera_record(fr.camera)}))
    (out / "poses.jsonl").write_text("\n".join(poses) + "\n")
    (out / "keypoints.jsonl").write_text("\n".join(kps) + "\n")
    (out / "cameras.jsonl").write_text("\n".join(cams) + "\n")
    save_template(out / "template.mesh", template)


@dataclass
class Dataset:
    frames: list  # FrameSample per frame
    skeletons: list
    depths: list
    template: BodyTemplate

    def __len__(self) -> int:
        return len(self.frames)


def read_dataset(dir_path) -> Dataset:
    root = Path(str(dir_path))
    if not (root / "cameras.jsonl").exists():
        raise FileNotFoundError(f"not a dataset directory: {root}")
    template = load_template(root / "template.mesh")
    poses = []
    for line in (root / "poses.jsonl").read_text().splitlines():
        rec = json.loads(line)
        poses.append(PoseParams(np.array(rec["joint_rotations"]),
                                np.array(rec["root_translation"]),
                                np.array(rec["shape"])))
    cams = []
    for line in (root / "cameras.jsonl").read_text().splitlines():
        cams.append(_camera_from_record(json.loads(line)))
    skeletons = []
    for line in (root / "keypoints.jsonl").read_text().splitlines():
        skeletons.append(Skeleton2D(np.array(json.loads(line)["keypoints"])))
    frames = []
    depths = []
    for i in range(len(poses)):
        name = f"{i:04d}.png"
        image = fileio.load_image_png(root / "frames" / name)
        mask = fileio.load_mask_png(root / "masks" / name)
        depths.append(fileio.load_depth_png(root / "depth" / name))
        frames.append(FrameSample(image, mask, cams[i], poses[i]))
    return Dataset(frames, skeletons, depths, template)
