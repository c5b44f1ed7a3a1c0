"""Image quality metrics: PSNR and windowed SSIM with an analytic gradient.

SSIM uses an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic
range 1, computed over windows that fit entirely inside the image ("valid"
windows) and averaged over windows and channels.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for unit dynamic range; +inf for identical images."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"size mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(-10.0 * np.log10(mse))


def _gauss_kernel1d() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=float)
    k = np.exp(-(x**2) / (2.0 * SSIM_SIGMA**2))
    return k / k.sum()


_KERNEL = _gauss_kernel1d()


def _corr_valid(img: np.ndarray) -> np.ndarray:
    half = SSIM_WINDOW // 2
    out = correlate1d(img, _KERNEL, axis=0, mode="constant")
    out = correlate1d(out, _KERNEL, axis=1, mode="constant")
    return out[half:-half, half:-half]


def _corr_valid_adjoint(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # adjoint of crop-after-correlate: zero-embed, then correlate with the
    # (symmetric) kernel again
    half = SSIM_WINDOW // 2
    full = np.zeros(shape)
    full[half:-half, half:-half] = grad
    out = correlate1d(full, _KERNEL, axis=0, mode="constant")
    return correlate1d(out, _KERNEL, axis=1, mode="constant")


def _channels(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return img[:, :, None]
    return img


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    value, _ = ssim_with_grad(a, b, want_grad=False)
    return value


def ssim_with_grad(a: np.ndarray, b: np.ndarray, want_grad: bool = True):
    """Mean SSIM and its gradient w.r.t. the first image."""
    x_all = _channels(a)
    y_all = _channels(b)
    if x_all.shape != y_all.shape:
        raise ValueError(f"size mismatch: {x_all.shape} vs {y_all.shape}")
    h, w = x_all.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    n_ch = x_all.shape[2]
    total_sum = 0.0
    grad = np.zeros_like(x_all) if want_grad else None
    n_windows = (h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1)
    scale = 1.0 / (n_windows * n_ch)
    for ch in range(n_ch):
        x = x_all[:, :, ch]
        y = y_all[:, :, ch]
        ux = _corr_valid(x)
        uy = _corr_valid(y)
        mxx = _corr_valid(x * x)
        myy = _corr_valid(y * y)
        mxy = _corr_valid(x * y)
        sx = mxx - ux * ux
        sy = myy - uy * uy
        sxy = mxy - ux * uy
        a1 = 2.0 * ux * uy + c1
        a2 = 2.0 * sxy + c2
        b1 = ux * ux + uy * uy + c1
        b2 = sx + sy + c2
        denom = b1 * b2
        s_map = (a1 * a2) / denom
        total_sum += float(s_map.sum())
        if not want_grad:
            continue
        ds_da1 = a2 / denom
        ds_da2 = a1 / denom
        ds_db1 = -s_map / b1
        ds_db2 = -s_map / b2
        d_ux = ds_da1 * 2.0 * uy + ds_da2 * (-2.0 * uy) + ds_db1 * 2.0 * ux + ds_db2 * (-2.0 * ux)
        d_mxx = ds_db2
        d_mxy = ds_da2 * 2.0
        g = _corr_valid_adjoint(d_ux * scale, (h, w))
        g += 2.0 * x * _corr_valid_adjoint(d_mxx * scale, (h, w))
        g += y * _corr_valid_adjoint(d_mxy * scale, (h, w))
        grad[:, :, ch] = g
    if want_grad and np.asarray(a).ndim == 2:
        grad = grad[:, :, 0]
    return total_sum / (n_windows * n_ch), grad
