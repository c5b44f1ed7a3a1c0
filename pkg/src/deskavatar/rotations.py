"""Axis-angle / quaternion / rotation-matrix conversions and derivatives.

Conventions: axis-angle vectors are in radians with the rotation angle equal
to the vector norm; quaternions are (w, x, y, z) with unit norm.
"""

from __future__ import annotations

import numpy as np

_SMALL_ANGLE = 1e-8


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Rodrigues rotation for one axis-angle vector or a stack of them.

    Accepts (3,) or (..., 3); returns matching (..., 3, 3).
    """
    aa = np.asarray(aa, dtype=float)
    single = aa.ndim == 1
    flat = aa.reshape(-1, 3)
    out = np.empty((flat.shape[0], 3, 3))
    for i, v in enumerate(flat):
        theta = np.linalg.norm(v)
        K = hat(v)
        if theta < _SMALL_ANGLE:
            out[i] = np.eye(3) + K + 0.5 * (K @ K)
        else:
            Kn = K / theta
            out[i] = (
                np.eye(3)
                + np.sin(theta) * Kn
                + (1.0 - np.cos(theta)) * (Kn @ Kn)
            )
    if single:
        return out[0]
    return out.reshape(aa.shape[:-1] + (3, 3))


def axis_angle_jacobian(aa: np.ndarray) -> np.ndarray:
    """Derivative of the Rodrigues matrix w.r.t. the axis-angle components.

    Returns J with shape (3, 3, 3) where J[i] = dR/d aa[i], using the
    closed form of Gallego & Yezzi; the small-angle limit is dR/d aa[i] =
    hat(e_i).
    """
    aa = np.asarray(aa, dtype=float)
    theta2 = float(aa @ aa)
    J = np.empty((3, 3, 3))
    if theta2 < _SMALL_ANGLE**2:
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            J[i] = hat(e)
        return J
    R = axis_angle_to_matrix(aa)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        term = aa[i] * hat(aa) + hat(np.cross(aa, (np.eye(3) - R) @ e))
        J[i] = (term / theta2) @ R
    return J


def axis_angle_to_quat(aa: np.ndarray) -> np.ndarray:
    """Axis-angle (..., 3) to unit quaternion (..., 4), (w, x, y, z)."""
    aa = np.asarray(aa, dtype=float)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    half = 0.5 * theta
    # sin(x)/x evaluated stably near zero
    sinc = np.where(theta < _SMALL_ANGLE, 0.5 - theta**2 / 48.0, np.sin(half) / np.where(theta == 0, 1.0, theta))
    w = np.cos(half)
    xyz = aa * sinc
    return np.concatenate([w, xyz], axis=-1)


def quat_to_axis_angle(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (..., 4) to axis-angle (..., 3)."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w = q[..., :1]
    xyz = q[..., 1:]
    # force w >= 0 so the angle lies in [0, pi]
    flip = np.where(w < 0, -1.0, 1.0)
    w = w * flip
    xyz = xyz * flip
    n = np.linalg.norm(xyz, axis=-1, keepdims=True)
    theta = 2.0 * np.arctan2(n, w)
    scale = np.where(n < _SMALL_ANGLE, 2.0 / np.clip(w, _SMALL_ANGLE, None), theta / np.where(n == 0, 1.0, n))
    return xyz * scale


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)
