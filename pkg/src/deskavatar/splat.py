"""Isotropic 3D Gaussian scenes: projection, alpha-composited rasterization,
and analytic gradients.

Images are float arrays of shape (H, W, 3) with values in [0, 1] after
rendering; the background is black. Splat footprints are truncated at
3 sigma and the per-image depth sort is global.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

NEAR_PLANE = 0.01

# Real spherical harmonics basis constants (graphics convention), degree 0..3.
_SH_C0 = 0.28209479177387814
_SH_C1 = 0.4886025119029199
_SH_C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
          1.0925484305920792, 0.5462742152960396)
_SH_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
          0.3731763325901154, 0.4570457994644658, 1.445305721320277,
          0.5900435899266435)

SH_COEFFS_PER_CHANNEL = 16


@dataclass
class GaussianSet:
    """N isotropic Gaussians: world positions, log std, SH colors, opacity logits."""

    positions: np.ndarray      # (N, 3)
    log_scales: np.ndarray     # (N,), world std = exp(log_scale)
    sh_coeffs: np.ndarray      # (N, 16, 3)
    opacity_logits: np.ndarray  # (N,), opacity = sigmoid(logit)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.log_scales = np.asarray(self.log_scales, dtype=float).reshape(n)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=float).reshape(n, SH_COEFFS_PER_CHANNEL, 3)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=float).reshape(n)

    def __len__(self) -> int:
        return len(self.positions)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite positions")
        if not np.all(np.isfinite(np.exp(self.log_scales))):
            raise ValueError("non-finite scales")
        if not (np.all(np.isfinite(self.sh_coeffs)) and np.all(np.isfinite(self.opacity_logits))):
            raise ValueError("non-finite appearance parameters")

    def copy(self) -> "GaussianSet":
        return GaussianSet(self.positions.copy(), self.log_scales.copy(),
                           self.sh_coeffs.copy(), self.opacity_logits.copy())

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @classmethod
    def empty(cls) -> "GaussianSet":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros((0, SH_COEFFS_PER_CHANNEL, 3)), np.zeros(0))


@dataclass
class Camera:
    """Pinhole camera: x_cam = rotation @ x_world + translation."""

    focal: tuple[float, float]        # (fx, fy) pixels
    principal: tuple[float, float]    # (cx, cy) pixels
    rotation: np.ndarray              # (3, 3) world-to-camera
    translation: np.ndarray           # (3,)
    size: tuple[int, int]             # (W, H)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        self.focal = (float(self.focal[0]), float(self.focal[1]))
        self.principal = (float(self.principal[0]), float(self.principal[1]))
        self.size = (int(self.size[0]), int(self.size[1]))

    def validate(self) -> None:
        fx, fy = self.focal
        if not (fx > 0 and fy > 0):
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err >= 1e-6:
            raise ValueError(f"extrinsic rotation not orthonormal (|R^T R - I| = {err:.3g})")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


@dataclass
class Splat2D:
    index: int       # index into the source GaussianSet
    mean2d: np.ndarray  # (2,) pixels
    std: float       # isotropic screen-space std, pixels
    depth: float     # camera-space depth


@dataclass
class GaussianGrads:
    """Gradients w.r.t. GaussianSet fields, same shapes as the fields."""

    positions: np.ndarray
    log_scales: np.ndarray
    sh_coeffs: np.ndarray
    opacity_logits: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "GaussianGrads":
        return cls(np.zeros((n, 3)), np.zeros(n), np.zeros((n, SH_COEFFS_PER_CHANNEL, 3)), np.zeros(n))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values for unit directions (M, 3), degree in {0..3}.

    Returns (M, (degree+1)^2).
    """
    if not 0 <= degree <= 3:
        raise ValueError("degree must be in 0..3")
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    cols = [np.full(len(dirs), _SH_C0)]
    if degree >= 1:
        cols += [_SH_C1 * y, _SH_C1 * z, _SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            _SH_C2[0] * x * y,
            _SH_C2[1] * y * z,
            _SH_C2[2] * (2.0 * zz - xx - yy),
            _SH_C2[3] * x * z,
            _SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            _SH_C3[0] * y * (3.0 * xx - yy),
            _SH_C3[1] * x * y * z,
            _SH_C3[2] * y * (4.0 * zz - xx - yy),
            _SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            _SH_C3[4] * x * (4.0 * zz - xx - yy),
            _SH_C3[5] * z * (xx - yy),
            _SH_C3[6] * x * (xx - 3.0 * yy),
        ]
    return np.stack(cols, axis=1)


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Derivatives of sh_basis w.r.t. the (unnormalized polynomial) direction.

    Returns (M, n_basis, 3).
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    m = len(dirs)
    zero = np.zeros(m)
    one = np.ones(m)
    rows = [np.stack([zero, zero, zero], axis=1)]
    if degree >= 1:
        rows += [
            np.stack([zero, _SH_C1 * one, zero], axis=1),
            np.stack([zero, zero, _SH_C1 * one], axis=1),
            np.stack([_SH_C1 * one, zero, zero], axis=1),
        ]
    if degree >= 2:
        rows += [
            _SH_C2[0] * np.stack([y, x, zero], axis=1),
            _SH_C2[1] * np.stack([zero, z, y], axis=1),
            _SH_C2[2] * np.stack([-2 * x, -2 * y, 4 * z], axis=1),
            _SH_C2[3] * np.stack([z, zero, x], axis=1),
            _SH_C2[4] * np.stack([2 * x, -2 * y, zero], axis=1),
        ]
    if degree >= 3:
        rows += [
            _SH_C3[0] * np.stack([6 * x * y, 3 * x * x - 3 * y * y, zero], axis=1),
            _SH_C3[1] * np.stack([y * z, x * z, x * y], axis=1),
            _SH_C3[2] * np.stack([-2 * x * y, 4 * z * z - x * x - 3 * y * y, 8 * y * z], axis=1),
            _SH_C3[3] * np.stack([-6 * x * z, -6 * y * z, 6 * z * z - 3 * x * x - 3 * y * y], axis=1),
            _SH_C3[4] * np.stack([4 * z * z - 3 * x * x - y * y, -2 * x * y, 8 * x * z], axis=1),
            _SH_C3[5] * np.stack([2 * x * z, -2 * y * z, x * x - y * y], axis=1),
            _SH_C3[6] * np.stack([3 * x * x - 3 * y * y, -6 * x * y, zero], axis=1),
        ]
    return np.stack(rows, axis=1)


def eval_sh(coeffs: np.ndarray, view_dir: np.ndarray, degree: int) -> np.ndarray:
    """View-dependent color: SH expansion plus 0.5 offset, clamped at 0."""
    coeffs = np.asarray(coeffs, dtype=float).reshape(SH_COEFFS_PER_CHANNEL, 3)
    view_dir = np.asarray(view_dir, dtype=float)
    basis = sh_basis(view_dir[None, :], degree)[0]
    n = basis.shape[0]
    raw = basis @ coeffs[:n] + 0.5
    return np.maximum(raw, 0.0)


def _splat_colors(g: GaussianSet, cam: Camera, idx: np.ndarray, degree: int):
    """Per-splat colors and intermediates for the view-dependent SH path."""
    rel = g.positions[idx] - cam.center
    dist = np.linalg.norm(rel, axis=1)
    dist = np.where(dist == 0, 1.0, dist)
    dirs = rel / dist[:, None]
    basis = sh_basis(dirs, degree)
    n = basis.shape[1]
    raw = np.einsum("mk,mkc->mc", basis, g.sh_coeffs[idx, :n, :]) + 0.5
    colors = np.maximum(raw, 0.0)
    return colors, raw, basis, dirs, dist


def _project_arrays(g: GaussianSet, cam: Camera):
    """Project all Gaussians; drop those with camera depth <= NEAR_PLANE.

    Returns (idx, mean2d, std, depth, cam_pts) for survivors, depth ascending
    order NOT applied here.
    """
    cam.validate()
    cam_pts = cam.world_to_cam(g.positions)
    depth = cam_pts[:, 2]
    keep = depth > NEAR_PLANE
    idx = np.nonzero(keep)[0]
    cam_pts = cam_pts[keep]
    depth = depth[keep]
    fx, fy = cam.focal
    cx, cy = cam.principal
    mean2d = np.stack([
        fx * cam_pts[:, 0] / depth + cx,
        fy * cam_pts[:, 1] / depth + cy,
    ], axis=1)
    f_avg = 0.5 * (fx + fy)
    std = f_avg * np.exp(g.log_scales[idx]) / depth
    return idx, mean2d, std, depth, cam_pts


def project(g: GaussianSet, cam: Camera) -> list[Splat2D]:
    """2D splats (mean, screen std, depth) for Gaussians in front of the camera."""
    idx, mean2d, std, depth, _ = _project_arrays(g, cam)
    return [Splat2D(int(i), mean2d[k].copy(), float(std[k]), float(depth[k]))
            for k, i in enumerate(idx)]


def _prepare_render(g: GaussianSet, cam: Camera, sh_degree: int):
    if not 0 <= sh_degree <= 3:
        raise ValueError("sh_degree must be in 0..3")
    idx, mean2d, std, depth, cam_pts = _project_arrays(g, cam)
    order = np.argsort(depth, kind="stable")
    idx = idx[order]
    mean2d = np.ascontiguousarray(mean2d[order])
    std = np.ascontiguousarray(std[order])
    depth = np.ascontiguousarray(depth[order])
    colors, raw, basis, dirs, dist = _splat_colors(g, cam, idx, sh_degree)
    opac = sigmoid(g.opacity_logits[idx])
    W, H = cam.size
    boxes = _kernels.compute_boxes(mean2d, std, W, H)
    return idx, mean2d, std, depth, colors, raw, basis, dirs, dist, opac, boxes


def rasterize(g: GaussianSet, cam: Camera, sh_degree: int) -> np.ndarray:
    """Front-to-back composited render over a black background, clamped to [0, 1]."""
    img, _, _ = rasterize_with_aux(g, cam, sh_degree)
    return img


def rasterize_with_aux(g: GaussianSet, cam: Camera, sh_degree: int):
    """Render plus coverage (1 - final transmittance) and expected-depth map.

    Depth is the alpha-weighted mean splat depth where coverage > 0 and +inf
    elsewhere.
    """
    W, H = cam.size
    img = np.zeros((H, W, 3))
    trans = np.ones((H, W))
    wdepth = np.zeros((H, W))
    if len(g) > 0:
        (_, mean2d, std, depth, colors, _, _, _, _, opac, boxes) = _prepare_render(g, cam, sh_degree)
        _kernels.forward_kernel(mean2d, std, opac, np.ascontiguousarray(colors),
                                depth, boxes, img, trans, wdepth, True)
    coverage = 1.0 - trans
    with np.errstate(invalid="ignore", divide="ignore"):
        depth_map = np.where(coverage > 0, wdepth / np.where(coverage > 0, coverage, 1.0), np.inf)
    return np.clip(img, 0.0, 1.0), coverage, depth_map


def rasterize_backward(g: GaussianSet, cam: Camera, sh_degree: int, grad_image: np.ndarray) -> GaussianGrads:
    """Gradients of sum(grad_image * render) w.r.t. all GaussianSet fields.

    Matches the forward pass including the 3-sigma truncation and the [0, 1]
    output clamp (clamped pixels pass no gradient).
    """
    grads = GaussianGrads.zeros(len(g))
    if len(g) == 0:
        return grads
    W, H = cam.size
    grad_image = np.asarray(grad_image, dtype=float).reshape(H, W, 3)
    (idx, mean2d, std, depth, colors, raw, basis, dirs, dist, opac, boxes) = \
        _prepare_render(g, cam, sh_degree)
    m = len(idx)
    offsets = _kernels.box_offsets(boxes)
    t_store = np.zeros(offsets[-1])
    a_store = np.zeros(offsets[-1])
    img = np.zeros((H, W, 3))
    trans = np.ones((H, W))
    colors_c = np.ascontiguousarray(colors)
    _kernels.forward_store_kernel(mean2d, std, opac, colors_c, boxes, offsets,
                                  img, trans, t_store, a_store)
    # output clamp: zero the gradient where the unclamped image leaves [0, 1]
    grad_img = np.where((img >= 0.0) & (img <= 1.0), grad_image, 0.0)
    grad_img = np.ascontiguousarray(grad_img)

    grad_color = np.zeros((m, 3))
    grad_mean = np.zeros((m, 2))
    grad_std = np.zeros(m)
    grad_opac = np.zeros(m)
    behind = np.zeros((H, W, 3))
    _kernels.backward_kernel(mean2d, std, opac, colors_c, boxes, offsets,
                             t_store, a_store, grad_img, behind,
                             grad_color, grad_mean, grad_std, grad_opac)

    fx, fy = cam.focal
    f_avg = 0.5 * (fx + fy)
    cam_pts = cam.world_to_cam(g.positions[idx])
    X, Y, Z = cam_pts[:, 0], cam_pts[:, 1], cam_pts[:, 2]
    s_world = np.exp(g.log_scales[idx])

    # opacity logits through the sigmoid
    d_opac = grad_opac * opac * (1.0 - opac)
    # screen std = f_avg * s / Z
    grads.log_scales[idx] = grad_std * (f_avg / Z) * s_world
    dZ_from_std = grad_std * (-f_avg * s_world / (Z * Z))
    # mean2d = (fx X / Z + cx, fy Y / Z + cy)
    dX = grad_mean[:, 0] * fx / Z
    dY = grad_mean[:, 1] * fy / Z
    dZ = -(grad_mean[:, 0] * fx * X + grad_mean[:, 1] * fy * Y) / (Z * Z) + dZ_from_std
    grad_cam = np.stack([dX, dY, dZ], axis=1)
    grad_pos = grad_cam @ cam.rotation

    # color path: clamp-at-zero mask, then SH coefficients and view direction
    active = (raw > 0).astype(float)
    grad_raw = grad_color * active
    n_basis = basis.shape[1]
    grads.sh_coeffs[idx, :n_basis, :] = basis[:, :, None] * grad_raw[:, None, :]
    dbasis = sh_basis_grad(dirs, sh_degree)  # (m, n_basis, 3)
    # d(raw_c)/d(dir) = sum_k coeff[k, c] * dbasis[k]
    grad_dir = np.einsum("mkc,mc,mkd->md", g.sh_coeffs[idx, :n_basis, :], grad_raw, dbasis)
    # direction = rel / |rel|: project through the normalization Jacobian
    vdot = np.einsum("md,md->m", dirs, grad_dir)
    grad_rel = (grad_dir - dirs * vdot[:, None]) / dist[:, None]
    grad_pos = grad_pos + grad_rel

    grads.positions[idx] = grad_pos
    grads.opacity_logits[idx] = d_opac
    return grads
