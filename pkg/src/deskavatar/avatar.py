"""Articulated capsule body: kinematic chain, linear blend skinning,
pose-conditioned offset network, and the mesh Laplacian regularizer.

Joint j's local transform rotates about its rest position; global transforms
compose down the tree and the root additionally translates. Shape
coefficients act linearly on rest joints and canonical vertices through the
template's shape-direction tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rotations import axis_angle_jacobian, axis_angle_to_matrix

N_SHAPE_COEFFS = 10


@dataclass
class BodyTemplate:
    canonical_vertices: np.ndarray   # (N, 3)
    edges: np.ndarray                # (E, 2) int
    faces: np.ndarray                # (F, 3) int
    joints: np.ndarray               # (J, 3) rest positions
    parents: np.ndarray              # (J,) int, root = -1 at index 0
    skin_weights: np.ndarray         # (N, J) row-stochastic
    joint_shape_dirs: np.ndarray = None    # (J, 3, 10), d rest_joint / d shape
    vertex_shape_dirs: np.ndarray = None   # (N, 3, 10)

    def __post_init__(self):
        self.canonical_vertices = np.asarray(self.canonical_vertices, dtype=float).reshape(-1, 3)
        self.edges = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        self.faces = np.asarray(self.faces, dtype=int).reshape(-1, 3)
        self.joints = np.asarray(self.joints, dtype=float).reshape(-1, 3)
        self.parents = np.asarray(self.parents, dtype=int).ravel()
        self.skin_weights = np.asarray(self.skin_weights, dtype=float)
        if self.joint_shape_dirs is None:
            self.joint_shape_dirs = np.zeros((self.n_joints, 3, N_SHAPE_COEFFS))
        if self.vertex_shape_dirs is None:
            self.vertex_shape_dirs = np.zeros((self.n_vertices, 3, N_SHAPE_COEFFS))
        self.joint_shape_dirs = np.asarray(self.joint_shape_dirs, dtype=float)
        self.vertex_shape_dirs = np.asarray(self.vertex_shape_dirs, dtype=float)

    @property
    def n_vertices(self) -> int:
        return len(self.canonical_vertices)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def validate(self) -> None:
        if self.parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for j in range(1, self.n_joints):
            if not 0 <= self.parents[j] < j:
                raise ValueError("parents must form a tree in topological order")
        sums = self.skin_weights.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError("skin weight rows must sum to 1")

    def rest_joints(self, shape: np.ndarray) -> np.ndarray:
        return self.joints + self.joint_shape_dirs @ np.asarray(shape, dtype=float)

    def shaped_vertices(self, shape: np.ndarray) -> np.ndarray:
        return self.canonical_vertices + self.vertex_shape_dirs @ np.asarray(shape, dtype=float)


@dataclass
class PoseParams:
    joint_rotations: np.ndarray   # (J, 3) axis-angle
    root_translation: np.ndarray  # (3,)
    shape: np.ndarray             # (10,)

    def __post_init__(self):
        self.joint_rotations = np.asarray(self.joint_rotations, dtype=float).reshape(-1, 3)
        self.root_translation = np.asarray(self.root_translation, dtype=float).reshape(3)
        self.shape = np.asarray(self.shape, dtype=float).reshape(N_SHAPE_COEFFS)

    @classmethod
    def zero(cls, n_joints: int) -> "PoseParams":
        return cls(np.zeros((n_joints, 3)), np.zeros(3), np.zeros(N_SHAPE_COEFFS))

    def copy(self) -> "PoseParams":
        return PoseParams(self.joint_rotations.copy(), self.root_translation.copy(), self.shape.copy())


@dataclass
class FKResult:
    """Per-joint world transforms x -> rotations[j] @ x + translations[j],
    plus the intermediates needed by fk_backward."""

    rotations: np.ndarray       # (J, 3, 3)
    translations: np.ndarray    # (J, 3)
    local_rotations: np.ndarray  # (J, 3, 3)
    local_translations: np.ndarray  # (J, 3)
    rest: np.ndarray            # (J, 3) shaped rest joints


def forward_kinematics(template: BodyTemplate, pose: PoseParams) -> FKResult:
    template.validate()
    J = template.n_joints
    rest = template.rest_joints(pose.shape)
    R_l = axis_angle_to_matrix(pose.joint_rotations)
    t_l = rest - np.einsum("jab,jb->ja", R_l, rest)
    R_g = np.empty((J, 3, 3))
    t_g = np.empty((J, 3))
    R_g[0] = R_l[0]
    t_g[0] = t_l[0] + pose.root_translation
    for j in range(1, J):
        p = template.parents[j]
        R_g[j] = R_g[p] @ R_l[j]
        t_g[j] = R_g[p] @ t_l[j] + t_g[p]
    return FKResult(R_g, t_g, R_l, t_l, rest)


def posed_joints(fk: FKResult) -> np.ndarray:
    """World positions of the joints themselves under the pose."""
    return np.einsum("jab,jb->ja", fk.rotations, fk.rest) + fk.translations


def fk_backward(
    template: BodyTemplate,
    pose: PoseParams,
    fk: FKResult,
    grad_rotations: np.ndarray,
    grad_translations: np.ndarray,
    grad_rest: np.ndarray | None = None,
):
    """Backpropagate gradients w.r.t. global joint transforms to pose params.

    grad_rest carries any direct dL/d(rest joint) contributions (e.g. from
    posed_joints). Returns (grad_joint_rotations, grad_root_translation,
    grad_shape).
    """
    J = template.n_joints
    gR = np.array(grad_rotations, dtype=float, copy=True)
    gt = np.array(grad_translations, dtype=float, copy=True)
    g_rest = np.zeros((J, 3)) if grad_rest is None else np.array(grad_rest, dtype=float, copy=True)
    grad_aa = np.zeros((J, 3))
    grad_root = np.zeros(3)
    for j in range(J - 1, -1, -1):
        p = template.parents[j]
        if p >= 0:
            gR[p] += gR[j] @ fk.local_rotations[j].T
            grad_Rl = fk.rotations[p].T @ gR[j]
            gR[p] += np.outer(gt[j], fk.local_translations[j])
            grad_tl = fk.rotations[p].T @ gt[j]
            gt[p] += gt[j]
        else:
            grad_Rl = gR[j]
            grad_tl = gt[j]
            grad_root = gt[j].copy()
        # t_l = rest - R_l rest
        g_rest[j] += grad_tl - fk.local_rotations[j].T @ grad_tl
        grad_Rl = grad_Rl - np.outer(grad_tl, fk.rest[j])
        jac = axis_angle_jacobian(pose.joint_rotations[j])
        for i in range(3):
            grad_aa[j, i] = float(np.sum(jac[i] * grad_Rl))
    grad_shape = np.einsum("jck,jc->k", template.joint_shape_dirs, g_rest)
    return grad_aa, grad_root, grad_shape


def skin_blend(template: BodyTemplate, fk: FKResult):
    """Per-vertex blended affine transform (A, b): v' = A v + b."""
    w = template.skin_weights
    A = np.einsum("nj,jab->nab", w, fk.rotations)
    b = w @ fk.translations
    return A, b


def skin_vertices(template: BodyTemplate, fk: FKResult, vertices: np.ndarray | None = None) -> np.ndarray:
    """Linear blend skinning of the canonical (or given) vertices."""
    v = template.canonical_vertices if vertices is None else np.asarray(vertices, dtype=float)
    A, b = skin_blend(template, fk)
    return np.einsum("nab,nb->na", A, v) + b


@dataclass
class OffsetNet:
    """Two-hidden-layer MLP from flattened joint rotations to per-vertex offsets.

    tanh hiddens, linear output scaled by 0.01 so initial offsets stay small.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    out_scale: float = 0.01

    @classmethod
    def init(cls, n_joints: int, n_vertices: int, seed: int = 0, hidden: int = 64) -> "OffsetNet":
        rng = np.random.default_rng(seed)
        in_dim = n_joints * 3
        out_dim = n_vertices * 3
        def layer(rows, cols):
            return rng.normal(0.0, 1.0 / np.sqrt(cols), (rows, cols))
        return cls(layer(hidden, in_dim), np.zeros(hidden),
                   layer(hidden, hidden), np.zeros(hidden),
                   layer(out_dim, hidden), np.zeros(out_dim))

    @property
    def n_vertices(self) -> int:
        return len(self.b3) // 3

    def forward(self, joint_rotations: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cache(joint_rotations)
        return out

    def forward_cache(self, joint_rotations: np.ndarray):
        x = np.asarray(joint_rotations, dtype=float).ravel()
        if x.size != self.w1.shape[1]:
            raise ValueError(f"expected input of size {self.w1.shape[1]}, got {x.size}")
        h1 = np.tanh(self.w1 @ x + self.b1)
        h2 = np.tanh(self.w2 @ h1 + self.b2)
        out = self.out_scale * (self.w3 @ h2 + self.b3)
        return out.reshape(-1, 3), (x, h1, h2)

    def backward(self, cache, grad_offsets: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the flat weight vector for given output gradients."""
        x, h1, h2 = cache
        gy = np.asarray(grad_offsets, dtype=float).ravel() * self.out_scale
        gw3 = np.outer(gy, h2)
        gb3 = gy
        gh2 = self.w3.T @ gy
        gz2 = gh2 * (1.0 - h2 * h2)
        gw2 = np.outer(gz2, h1)
        gb2 = gz2
        gh1 = self.w2.T @ gz2
        gz1 = gh1 * (1.0 - h1 * h1)
        gw1 = np.outer(gz1, x)
        gb1 = gz1
        return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2, gw3.ravel(), gb3])

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2,
                               self.w3.ravel(), self.b3])

    def from_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        pieces = [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]
        off = 0
        for arr in pieces:
            arr[...] = flat[off:off + arr.size].reshape(arr.shape)
            off += arr.size
        if off != flat.size:
            raise ValueError("flat vector size mismatch")

    @property
    def layer_dims(self) -> tuple[int, int, int]:
        return (self.w1.shape[1], self.w1.shape[0], len(self.b3) // 3)


def deformed_positions(template: BodyTemplate, pose: PoseParams, net: OffsetNet) -> np.ndarray:
    """Skinned vertices plus network offsets, applied in posed space."""
    fk = forward_kinematics(template, pose)
    skinned = skin_vertices(template, fk)
    offsets = net.forward(pose.joint_rotations)
    if len(offsets) != len(skinned):
        raise ValueError("offset network output does not match vertex count")
    return skinned + offsets


def _adjacency(n: int, edges: np.ndarray):
    edges = np.asarray(edges, dtype=int)
    deg = np.zeros(n)
    np.add.at(deg, edges[:, 0], 1.0)
    np.add.at(deg, edges[:, 1], 1.0)
    if np.any(deg == 0):
        raise ValueError("isolated vertex: every vertex needs at least one neighbor")
    return deg


def laplacian(vertices: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Uniform-weight graph Laplacian: v minus the mean of its neighbors."""
    vertices = np.asarray(vertices, dtype=float)
    edges = np.asarray(edges, dtype=int)
    n = len(vertices)
    deg = _adjacency(n, edges)
    nbr_sum = np.zeros_like(vertices)
    np.add.at(nbr_sum, edges[:, 0], vertices[edges[:, 1]])
    np.add.at(nbr_sum, edges[:, 1], vertices[edges[:, 0]])
    return vertices - nbr_sum / deg[:, None]


def laplacian_loss(canonical: np.ndarray, deformed: np.ndarray, edges: np.ndarray) -> float:
    """Squared difference between canonical and deformed Laplacians."""
    diff = laplacian(canonical, edges) - laplacian(deformed, edges)
    return float(np.sum(diff * diff))
