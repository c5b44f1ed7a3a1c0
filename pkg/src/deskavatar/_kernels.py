"""Numba-compiled inner loops for front-to-back Gaussian splatting.

The kernels operate on pre-projected splats (2D means in pixels, isotropic
screen stds, view depths) sorted by ascending depth. Footprints are truncated
at 3 sigma; the truncation radius and box clipping must stay identical across
the forward, store, and backward kernels.
"""

from __future__ import annotations

import numpy as np
from numba import njit


def compute_boxes(mean2d: np.ndarray, std: np.ndarray, width: int, height: int) -> np.ndarray:
    """Clipped pixel bounding boxes (x0, x1, y0, y1) of the 3-sigma footprints."""
    r = 3.0 * std
    x0 = np.maximum(np.ceil(mean2d[:, 0] - r), 0.0)
    x1 = np.minimum(np.floor(mean2d[:, 0] + r) + 1.0, float(width))
    y0 = np.maximum(np.ceil(mean2d[:, 1] - r), 0.0)
    y1 = np.minimum(np.floor(mean2d[:, 1] + r) + 1.0, float(height))
    boxes = np.stack([x0, x1, y0, y1], axis=1).astype(np.int64)
    boxes[:, 1] = np.maximum(boxes[:, 1], boxes[:, 0])
    boxes[:, 3] = np.maximum(boxes[:, 3], boxes[:, 2])
    return boxes


def box_offsets(boxes: np.ndarray) -> np.ndarray:
    """Prefix offsets into the flat per-pixel store, one entry per splat."""
    areas = (boxes[:, 1] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 2])
    off = np.zeros(len(boxes) + 1, dtype=np.int64)
    np.cumsum(areas, out=off[1:])
    return off


@njit(cache=True)
def forward_kernel(mean2d, std, opac, color, depth, boxes, img, trans, wdepth, want_depth):
    n = mean2d.shape[0]
    for k in range(n):
        mx = mean2d[k, 0]
        my = mean2d[k, 1]
        s = std[k]
        r2 = 9.0 * s * s
        inv = -0.5 / (s * s)
        x0, x1, y0, y1 = boxes[k, 0], boxes[k, 1], boxes[k, 2], boxes[k, 3]
        for y in range(y0, y1):
            dy = y - my
            for x in range(x0, x1):
                dx = x - mx
                d2 = dx * dx + dy * dy
                if d2 > r2:
                    continue
                a = opac[k] * np.exp(d2 * inv)
                t = trans[y, x]
                w = t * a
                img[y, x, 0] += w * color[k, 0]
                img[y, x, 1] += w * color[k, 1]
                img[y, x, 2] += w * color[k, 2]
                if want_depth:
                    wdepth[y, x] += w * depth[k]
                trans[y, x] = t * (1.0 - a)


@njit(cache=True)
def forward_store_kernel(mean2d, std, opac, color, boxes, offsets, img, trans, t_store, a_store):
    n = mean2d.shape[0]
    for k in range(n):
        mx = mean2d[k, 0]
        my = mean2d[k, 1]
        s = std[k]
        r2 = 9.0 * s * s
        inv = -0.5 / (s * s)
        x0, x1, y0, y1 = boxes[k, 0], boxes[k, 1], boxes[k, 2], boxes[k, 3]
        base = offsets[k]
        w_box = x1 - x0
        for y in range(y0, y1):
            dy = y - my
            row = base + (y - y0) * w_box
            for x in range(x0, x1):
                dx = x - mx
                d2 = dx * dx + dy * dy
                t = trans[y, x]
                if d2 > r2:
                    t_store[row + (x - x0)] = t
                    a_store[row + (x - x0)] = 0.0
                    continue
                a = opac[k] * np.exp(d2 * inv)
                w = t * a
                img[y, x, 0] += w * color[k, 0]
                img[y, x, 1] += w * color[k, 1]
                img[y, x, 2] += w * color[k, 2]
                t_store[row + (x - x0)] = t
                a_store[row + (x - x0)] = a
                trans[y, x] = t * (1.0 - a)


@njit(cache=True)
def backward_kernel(
    mean2d,
    std,
    opac,
    color,
    boxes,
    offsets,
    t_store,
    a_store,
    grad_img,
    behind,
    grad_color,
    grad_mean,
    grad_std,
    grad_opac,
):
    # Reverse depth order; `behind` accumulates sum_{k>i} c_k a_k prod(1-a_j)
    # restricted to splats strictly behind the current one, which gives
    # d(pixel)/d(alpha_i) = T_i * (c_i - behind) without dividing by 1-alpha.
    n = mean2d.shape[0]
    for k in range(n - 1, -1, -1):
        mx = mean2d[k, 0]
        my = mean2d[k, 1]
        s = std[k]
        o = opac[k]
        inv_s2 = 1.0 / (s * s)
        x0, x1, y0, y1 = boxes[k, 0], boxes[k, 1], boxes[k, 2], boxes[k, 3]
        base = offsets[k]
        w_box = x1 - x0
        for y in range(y0, y1):
            dy = y - my
            row = base + (y - y0) * w_box
            for x in range(x0, x1):
                a = a_store[row + (x - x0)]
                if a == 0.0:
                    continue
                t = t_store[row + (x - x0)]
                dx = x - mx
                d2 = dx * dx + dy * dy
                w = t * a
                grad_alpha = 0.0
                for c in range(3):
                    gc = grad_img[y, x, c]
                    grad_color[k, c] += gc * w
                    grad_alpha += gc * t * (color[k, c] - behind[y, x, c])
                    behind[y, x, c] = a * color[k, c] + (1.0 - a) * behind[y, x, c]
                g = a / o
                grad_opac[k] += grad_alpha * g
                grad_g = grad_alpha * o
                grad_mean[k, 0] += grad_g * g * dx * inv_s2
                grad_mean[k, 1] += grad_g * g * dy * inv_s2
                grad_std[k] += grad_g * g * d2 * inv_s2 / s
