"""Per-frame pose recovery from 2D keypoints: weighted reprojection loss,
pose/shape regularization, temporal smoothness, and a two-stage Adam solve
with analytic gradients through the kinematic chain and projection.

Joint-to-keypoint correspondence for the reduced 16-joint body (keypoint
indexing as in deskavatar.pose): head->nose plus the 13 named limb/torso
points; the pelvis and spine joints are unobserved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .avatar import (
    BodyTemplate,
    PoseParams,
    fk_backward,
    forward_kinematics,
    posed_joints,
)
from .body import J as JOINT_INDEX
from .pose import Skeleton2D, savgol, smooth_rotation_series
from .splat import NEAR_PLANE, Camera
from .trainer import AdamState, adam_step

# (joint index, keypoint index); pelvis and spine have no 2D observation
JOINT_KEYPOINT_MAP = tuple(
    (JOINT_INDEX[j], k) for j, k in (
        ("head", 0), ("neck", 1),
        ("r_shoulder", 2), ("r_elbow", 3), ("r_wrist", 4),
        ("l_shoulder", 5), ("l_elbow", 6), ("l_wrist", 7),
        ("r_hip", 8), ("r_knee", 9), ("r_ankle", 10),
        ("l_hip", 11), ("l_knee", 12), ("l_ankle", 13),
    )
)

# joints behind the near plane project to this off-screen sentinel with zero
# gradient, which acts as a large constant reprojection penalty
OFFSCREEN_OFFSET = 1e4


@dataclass
class FitWeights:
    lam_kpt: float = 1.0
    lam_reg: float = 0.001
    lam_temp: float = 0.1
    stage1_iters: int = 100
    stage2_iters: int = 200
    lr: float = 1e-3
    # stage 1 moves only the global pose; the boosted rate lets it traverse
    # offsets on the order of stage1_iters * lr * scale
    stage1_root_lr_scale: float = 10.0

    def validate(self) -> None:
        if min(self.lam_kpt, self.lam_reg, self.lam_temp) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class FitSequence:
    skeletons: list
    camera: Camera
    depth_maps: list | None = None
    masks: list | None = None

    def __len__(self) -> int:
        return len(self.skeletons)


def project_joints(pose: PoseParams, template: BodyTemplate, cam: Camera) -> np.ndarray:
    """Pinhole projection of the posed joints, (J, 2) pixels."""
    proj, _ = _project_joints_cached(pose, template, cam)
    return proj


def _project_joints_cached(pose: PoseParams, template: BodyTemplate, cam: Camera):
    fk = forward_kinematics(template, pose)
    joints = posed_joints(fk)
    cam_pts = cam.world_to_cam(joints)
    fx, fy = cam.focal
    cx, cy = cam.principal
    z = cam_pts[:, 2]
    valid = z > NEAR_PLANE
    proj = np.empty((len(joints), 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        proj[:, 0] = fx * cam_pts[:, 0] / z + cx
        proj[:, 1] = fy * cam_pts[:, 1] / z + cy
    proj[~valid] = [cx + OFFSCREEN_OFFSET, cy + OFFSCREEN_OFFSET]
    return proj, (fk, joints, cam_pts, valid)


def kpt_loss(pose: PoseParams, obs: Skeleton2D, cam: Camera, template: BodyTemplate) -> float:
    val, _, _, _ = _kpt_loss_grad(pose, obs, cam, template, want_grad=False)
    return val


def _kpt_loss_grad(pose: PoseParams, obs: Skeleton2D, cam: Camera,
                   template: BodyTemplate, want_grad: bool = True):
    proj, (fk, joints, cam_pts, valid) = _project_joints_cached(pose, template, cam)
    fx, fy = cam.focal
    total = 0.0
    grad_joints = np.zeros_like(joints)
    for j, k in JOINT_KEYPOINT_MAP:
        conf = obs.keypoints[k, 2]
        if conf == 0.0:
            continue
        e = proj[j] - obs.keypoints[k, :2]
        total += conf * float(e @ e)
        if not want_grad or not valid[j]:
            continue
        x, y, z = cam_pts[j]
        gproj = 2.0 * conf * e
        gc = np.array([
            gproj[0] * fx / z,
            gproj[1] * fy / z,
            -(gproj[0] * fx * x + gproj[1] * fy * y) / (z * z),
        ])
        grad_joints[j] = gc @ cam.rotation
    if not want_grad:
        return total, None, None, None
    gR = np.einsum("ja,jb->jab", grad_joints, fk.rest)
    gt = grad_joints
    g_rest = np.einsum("jab,ja->jb", fk.rotations, grad_joints)
    g_aa, g_root, g_shape = fk_backward(template, pose, fk, gR, gt, g_rest)
    return total, g_aa, g_root, g_shape


def reg_loss(pose: PoseParams) -> float:
    """||shape||^2 plus squared joint rotations (zero-mean pose prior)."""
    return float(pose.shape @ pose.shape + np.sum(pose.joint_rotations**2))


def temp_loss(poses: list[PoseParams]) -> float:
    """Sum of squared frame-to-frame differences of rotations and shape."""
    total = 0.0
    for a, b in zip(poses[:-1], poses[1:]):
        d_theta = a.joint_rotations - b.joint_rotations
        d_beta = a.shape - b.shape
        total += float(np.sum(d_theta**2) + d_beta @ d_beta)
    return total


def _pack(poses: list[PoseParams]) -> np.ndarray:
    return np.stack([
        np.concatenate([p.joint_rotations.ravel(), p.root_translation, p.shape])
        for p in poses
    ])


def _unpack(flat: np.ndarray, n_joints: int) -> list[PoseParams]:
    nr = n_joints * 3
    return [PoseParams(row[:nr].reshape(n_joints, 3), row[nr:nr + 3], row[nr + 3:])
            for row in flat]


def fit_objective(poses: list[PoseParams], seq: FitSequence, template: BodyTemplate,
                  weights: FitWeights):
    """Total objective and its parts dict (kpt, reg, temp)."""
    kpt = sum(kpt_loss(p, s, seq.camera, template) for p, s in zip(poses, seq.skeletons))
    reg = sum(reg_loss(p) for p in poses)
    temp = temp_loss(poses)
    total = weights.lam_kpt * kpt + weights.lam_reg * reg + weights.lam_temp * temp
    return total, {"kpt": kpt, "reg": reg, "temp": temp}


def fit_objective_grad(poses: list[PoseParams], seq: FitSequence,
                       template: BodyTemplate, weights: FitWeights):
    """(total, gradient array of shape (T, J*3 + 3 + 10))."""
    n_joints = template.n_joints
    T = len(poses)
    grads = np.zeros((T, n_joints * 3 + 13))
    total = 0.0
    for t, (p, s) in enumerate(zip(poses, seq.skeletons)):
        val, g_aa, g_root, g_shape = _kpt_loss_grad(p, s, seq.camera, template)
        total += weights.lam_kpt * val
        grads[t, :n_joints * 3] += weights.lam_kpt * g_aa.ravel()
        grads[t, n_joints * 3:n_joints * 3 + 3] += weights.lam_kpt * g_root
        grads[t, n_joints * 3 + 3:] += weights.lam_kpt * g_shape

        total += weights.lam_reg * reg_loss(p)
        grads[t, :n_joints * 3] += weights.lam_reg * 2.0 * p.joint_rotations.ravel()
        grads[t, n_joints * 3 + 3:] += weights.lam_reg * 2.0 * p.shape

    for t in range(T - 1):
        d_theta = poses[t].joint_rotations - poses[t + 1].joint_rotations
        d_beta = poses[t].shape - poses[t + 1].shape
        total += weights.lam_temp * float(np.sum(d_theta**2) + d_beta @ d_beta)
        g_th = weights.lam_temp * 2.0 * d_theta.ravel()
        g_be = weights.lam_temp * 2.0 * d_beta
        grads[t, :n_joints * 3] += g_th
        grads[t + 1, :n_joints * 3] -= g_th
        grads[t, n_joints * 3 + 3:] += g_be
        grads[t + 1, n_joints * 3 + 3:] -= g_be
    return total, grads


@dataclass
class FitResult:
    poses: list
    final_loss: float
    parts: dict


def fit(seq: FitSequence, template: BodyTemplate, weights: FitWeights | None = None,
        init: list | None = None, smooth: bool = True) -> FitResult:
    """Two-stage Adam: global orientation/translation first, then all
    parameters with a cosine-decayed rate; optional trajectory smoothing.
    """
    weights = weights or FitWeights()
    weights.validate()
    if len(seq) < 1:
        raise ValueError("need at least one frame")
    n_joints = template.n_joints
    if init is None:
        poses = [PoseParams.zero(n_joints) for _ in range(len(seq))]
    else:
        poses = [p.copy() for p in init]
    params = _pack(poses)
    initial_total, _ = fit_objective(poses, seq, template, weights)
    limit = 1e6 * max(initial_total, 1e-9)

    root_mask = np.zeros(params.shape[1])
    root_mask[:3] = 1.0                       # root rotation
    root_mask[n_joints * 3:n_joints * 3 + 3] = 1.0  # root translation

    state = AdamState.like(params)
    for _ in range(weights.stage1_iters):
        poses = _unpack(params, n_joints)
        total, grads = fit_objective_grad(poses, seq, template, weights)
        if total > limit:
            raise RuntimeError(f"fit diverged: loss {total} exceeds {limit}")
        params, _ = adam_step(params, grads * root_mask, state,
                              weights.lr * weights.stage1_root_lr_scale)

    state = AdamState.like(params)
    for i in range(weights.stage2_iters):
        poses = _unpack(params, n_joints)
        total, grads = fit_objective_grad(poses, seq, template, weights)
        if total > limit:
            raise RuntimeError(f"fit diverged: loss {total} exceeds {limit}")
        lr = weights.lr * (0.01 + 0.99 * 0.5 * (1.0 + np.cos(np.pi * i / weights.stage2_iters)))
        params, _ = adam_step(params, grads, state, lr)

    poses = _unpack(params, n_joints)
    if smooth and len(poses) >= 2:
        poses = smooth_pose_sequence(poses)
    final, parts = fit_objective(poses, seq, template, weights)
    return FitResult(poses, final, parts)


def smooth_pose_sequence(poses: list[PoseParams], window: int = 9, order: int = 2) -> list[PoseParams]:
    """Savitzky-Golay over translations/shape and quaternion-continuity
    smoothing for each joint's rotation trajectory."""
    T = len(poses)
    n_joints = poses[0].joint_rotations.shape[0]
    rot = np.stack([p.joint_rotations for p in poses])       # (T, J, 3)
    trans = np.stack([p.root_translation for p in poses])    # (T, 3)
    shape = np.stack([p.shape for p in poses])               # (T, 10)
    for j in range(n_joints):
        rot[:, j, :] = smooth_rotation_series(rot[:, j, :], window, order)
    for d in range(3):
        trans[:, d] = savgol(trans[:, d], window, order)
    for d in range(shape.shape[1]):
        shape[:, d] = savgol(shape[:, d], window, order)
    return [PoseParams(rot[t], trans[t], shape[t]) for t in range(T)]


def align_depth(pred: np.ndarray, ref: np.ndarray, fg: np.ndarray) -> np.ndarray:
    """Scale the predicted depth so foreground stds match, then shift so
    foreground means match."""
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    fg = np.asarray(fg, dtype=bool)
    if not fg.any():
        raise ValueError("empty foreground mask")
    sig_pred = pred[fg].std()
    sig_ref = ref[fg].std()
    if sig_pred == 0.0:
        raise ValueError("zero variance in predicted foreground depth")
    scale = sig_pred / sig_ref
    out = pred / scale
    return out - out[fg].mean() + ref[fg].mean()


def save_poses_jsonl(path, poses) -> None:
    with open(str(path), "w") as fh:
        for i, p in enumerate(poses):
            fh.write(json.dumps({
                "frame": i,
                "joint_rotations": p.joint_rotations.tolist(),
                "root_translation": p.root_translation.tolist(),
                "shape": p.shape.tolist(),
            }) + "\n")


def load_poses_jsonl(path) -> list[PoseParams]:
    out = []
    for line in Path(str(path)).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        out.append(PoseParams(np.array(rec["joint_rotations"]),
                              np.array(rec["root_translation"]),
                              np.array(rec["shape"])))
    return out
