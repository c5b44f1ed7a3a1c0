"""Face/region fusion: Procrustes gating, similarity-transform alignment,
convex-hull masking, Poisson gradient-domain blending, and compositing.

Landmarks are (n, 2) pixel arrays; affine transforms are 2x3 matrices whose
linear part is a positive-scale rotation; masks are boolean (H, W) arrays in
destination coordinates.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

GATE_THRESHOLD = 0.01
SKIP_FUSION = float("inf")

POISSON_TOL = 1e-6
POISSON_OMEGA = 1.9


def procrustes_disparity(a: np.ndarray, b: np.ndarray) -> float:
    """RMS distance between the sets after centering, unit-norm scaling, and
    optimal rotation; returns inf (skip fusion) for degenerate sets."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if a.shape != b.shape or len(a) < 3:
        raise ValueError("landmark sets must match and contain at least 3 points")
    a0 = a - a.mean(axis=0)
    b0 = b - b.mean(axis=0)
    na = np.linalg.norm(a0)
    nb = np.linalg.norm(b0)
    if na == 0.0 or nb == 0.0:
        return SKIP_FUSION
    a0 /= na
    b0 /= nb
    # orthogonal Procrustes (rotation only) via the 2x2 SVD
    u, _, vt = np.linalg.svd(a0.T @ b0)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, d]) @ vt
    aligned = b0 @ rot.T
    return float(np.sqrt(np.mean(np.sum((a0 - aligned) ** 2, axis=1))))


def gate(disparity: float, threshold: float = GATE_THRESHOLD) -> bool:
    """True = proceed with fusion; disparity at or above the threshold skips."""
    if disparity < 0:
        raise ValueError("disparity must be nonnegative")
    return disparity < threshold


# eye landmark groups in the standard 68-point face layout
RIGHT_EYE_LANDMARKS = tuple(range(36, 42))
LEFT_EYE_LANDMARKS = tuple(range(42, 48))


def front_facing(confidences: np.ndarray,
                 right_eye=RIGHT_EYE_LANDMARKS, left_eye=LEFT_EYE_LANDMARKS,
                 threshold: float = 0.5) -> bool:
    """Fusion applies only when at least one eye is clearly visible: the mean
    detection confidence of either eye landmark group reaches the threshold."""
    confidences = np.asarray(confidences, dtype=float)
    return bool(confidences[list(right_eye)].mean() >= threshold
                or confidences[list(left_eye)].mean() >= threshold)


def estimate_partial_affine(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares similarity (rotation + uniform scale + translation).

    Closed form by complex regression on centered points. Returns the 2x3
    matrix mapping src to dst.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if src.shape != dst.shape or len(src) < 2:
        raise ValueError("need at least 2 matching points")
    zs = src[:, 0] + 1j * src[:, 1]
    zd = dst[:, 0] + 1j * dst[:, 1]
    ms = zs.mean()
    md = zd.mean()
    denom = np.sum(np.abs(zs - ms) ** 2)
    if denom == 0.0:
        raise ValueError("source points are all identical")
    a = np.sum((zd - md) * np.conj(zs - ms)) / denom
    if abs(a) == 0.0:
        raise ValueError("degenerate correspondence: zero similarity scale")
    b = md - a * ms
    return np.array([
        [a.real, -a.imag, b.real],
        [a.imag, a.real, b.imag],
    ])


def invert_affine(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float).reshape(2, 3)
    lin = m[:, :2]
    det = np.linalg.det(lin)
    if abs(det) < 1e-12:
        raise ValueError("affine transform is singular")
    inv = np.linalg.inv(lin)
    t = -inv @ m[:, 2]
    return np.hstack([inv, t[:, None]])


def apply_affine(m: np.ndarray, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    return points @ m[:, :2].T + m[:, 2]


def warp_affine(img: np.ndarray, m: np.ndarray, out_size: tuple[int, int]) -> np.ndarray:
    """Inverse-mapped bilinear warp; out_size is (W, H); out of bounds is 0."""
    img = np.asarray(img, dtype=float)
    gray = img.ndim == 2
    if gray:
        img = img[:, :, None]
    w_out, h_out = int(out_size[0]), int(out_size[1])
    inv = invert_affine(m)
    ys, xs = np.mgrid[0:h_out, 0:w_out]
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)
    src = apply_affine(inv, pts)
    sx = src[:, 0].reshape(h_out, w_out)
    sy = src[:, 1].reshape(h_out, w_out)
    h_in, w_in = img.shape[:2]
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros((h_out, w_out, img.shape[2]))
    for dy in (0, 1):
        for dx in (0, 1):
            xx = x0 + dx
            yy = y0 + dy
            valid = (xx >= 0) & (xx < w_in) & (yy >= 0) & (yy < h_in)
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            xx_c = np.clip(xx, 0, w_in - 1)
            yy_c = np.clip(yy, 0, h_in - 1)
            out += (wgt * valid)[:, :, None] * img[yy_c, xx_c]
    return out[:, :, 0] if gray else out


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; returns hull vertices in counterclockwise order.

    Collinear inputs yield a hull with fewer than 3 vertices.
    """
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    if len(pts) <= 2:
        return pts

    def cross(o, p, q):
        return (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    return hull


def convex_hull_mask(points: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Pixels whose centers lie inside (or on) the hull, by scanline fill.

    size is (W, H). Collinear landmark sets give an empty mask.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) < 3:
        raise ValueError("need at least 3 landmarks")
    w, h = int(size[0]), int(size[1])
    mask = np.zeros((h, w), dtype=bool)
    hull = convex_hull(points)
    if len(hull) < 3:
        return mask
    y_min = max(int(np.ceil(hull[:, 1].min())), 0)
    y_max = min(int(np.floor(hull[:, 1].max())), h - 1)
    n = len(hull)
    for y in range(y_min, y_max + 1):
        xs = []
        for i in range(n):
            p = hull[i]
            q = hull[(i + 1) % n]
            y0, y1 = p[1], q[1]
            if y0 == y1:
                if y0 == y:
                    xs += [p[0], q[0]]
                continue
            t = (y - y0) / (y1 - y0)
            if 0.0 <= t <= 1.0:
                xs.append(p[0] + t * (q[0] - p[0]))
        if not xs:
            continue
        x_lo = max(int(np.ceil(min(xs))), 0)
        x_hi = min(int(np.floor(max(xs))), w - 1)
        if x_hi >= x_lo:
            mask[y, x_lo:x_hi + 1] = True
    return mask


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask is empty")
    if mask[0, :].any() or mask[-1, :].any() or mask[:, 0].any() or mask[:, -1].any():
        raise ValueError("mask touches the image border")
    return mask


def poisson_blend(src: np.ndarray, dst: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Gradient-domain blend: interior matches the source Laplacian, boundary
    pinned to the destination. Channels solved independently by red-black SOR
    to an infinity-norm residual below POISSON_TOL.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape:
        raise ValueError("source and destination sizes differ")
    gray = dst.ndim == 2
    if gray:
        src = src[:, :, None]
        dst = dst[:, :, None]
    mask = _check_mask(mask)
    if mask.shape != dst.shape[:2]:
        raise ValueError("mask size mismatch")
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    n_interior = len(ys)
    max_iters = 10 * n_interior
    red = ((ys + xs) % 2) == 0
    idx_by_color = [(ys[red], xs[red]), (ys[~red], xs[~red])]

    out = dst.copy()
    for ch in range(dst.shape[2]):
        s = src[:, :, ch]
        rhs = 4.0 * s[ys, xs] - s[ys - 1, xs] - s[ys + 1, xs] - s[ys, xs - 1] - s[ys, xs + 1]
        rhs_map = np.zeros((h, w))
        rhs_map[ys, xs] = rhs
        f = out[:, :, ch]
        converged = False
        for _ in range(max_iters):
            for cy, cx in idx_by_color:
                nb = f[cy - 1, cx] + f[cy + 1, cx] + f[cy, cx - 1] + f[cy, cx + 1]
                gs = 0.25 * (rhs_map[cy, cx] + nb)
                f[cy, cx] = (1.0 - POISSON_OMEGA) * f[cy, cx] + POISSON_OMEGA * gs
            nb = f[ys - 1, xs] + f[ys + 1, xs] + f[ys, xs - 1] + f[ys, xs + 1]
            residual = np.abs(4.0 * f[ys, xs] - nb - rhs)
            if residual.max() < POISSON_TOL:
                converged = True
                break
        if not converged:
            raise RuntimeError(
                f"poisson solve did not reach {POISSON_TOL} within {max_iters} sweeps")
        out[:, :, ch] = f
    return out[:, :, 0] if gray else out


def composite(face: np.ndarray, m_inv: np.ndarray, mask: np.ndarray, bg: np.ndarray) -> np.ndarray:
    """mask * warp(face, m_inv) + (1 - mask) * bg, sizes taken from bg."""
    bg = np.asarray(bg, dtype=float)
    h, w = bg.shape[:2]
    warped = warp_affine(face, m_inv, (w, h))
    m = np.asarray(mask, dtype=float)
    if bg.ndim == 3:
        m = m[:, :, None]
    return m * warped + (1.0 - m) * bg


def save_landmarks_json(path, points: np.ndarray) -> None:
    Path(str(path)).write_text(json.dumps(np.asarray(points, dtype=float).tolist()))


def load_landmarks_json(path) -> np.ndarray:
    return np.array(json.loads(Path(str(path)).read_text()), dtype=float).reshape(-1, 2)
