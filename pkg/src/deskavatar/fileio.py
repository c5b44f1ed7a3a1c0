"""File formats: 8-bit PNG images, 16-bit depth PNGs, and the GSAV
Gaussian-set binary.

PNG images map [0, 1] floats to 8-bit by value*255 rounding (no gamma
handling). Depth PNGs quantize [DEPTH_NEAR, DEPTH_FAR] to codes 1..65535;
code 0 means "no coverage" and decodes to +inf.

GSAV checkpoint layout (little endian): magic b"GSAV", version u32, N u64,
then contiguous float32 arrays in field order: positions (N*3), log_scales
(N), sh_coeffs (N*48), opacity_logits (N).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .splat import GaussianSet

GSAV_MAGIC = b"GSAV"
GSAV_VERSION = 1

DEPTH_NEAR = 0.0
DEPTH_FAR = 10.0


def save_image_png(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=float)
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(str(path))


def load_image_png(path) -> np.ndarray:
    with Image.open(str(path)) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    return arr.astype(float) / 255.0


def save_mask_png(path, mask: np.ndarray) -> None:
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(str(path))


def load_mask_png(path) -> np.ndarray:
    with Image.open(str(path)) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def save_depth_png(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype=float)
    finite = np.isfinite(depth)
    clipped = np.clip(depth, DEPTH_NEAR, DEPTH_FAR)
    codes = 1 + np.round((clipped - DEPTH_NEAR) / (DEPTH_FAR - DEPTH_NEAR) * 65534.0)
    data = np.where(finite, codes, 0).astype(np.uint16)
    Image.fromarray(data).save(str(path))


def load_depth_png(path) -> np.ndarray:
    with Image.open(str(path)) as im:
        codes = np.asarray(im, dtype=np.uint32)
    depth = DEPTH_NEAR + (codes.astype(float) - 1.0) / 65534.0 * (DEPTH_FAR - DEPTH_NEAR)
    return np.where(codes == 0, np.inf, depth)


def gaussians_to_bytes(g: GaussianSet) -> bytes:
    parts = [GSAV_MAGIC, struct.pack("<I", GSAV_VERSION), struct.pack("<Q", len(g))]
    for arr in (g.positions, g.log_scales, g.sh_coeffs, g.opacity_logits):
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def gaussians_from_bytes(raw: bytes, offset: int = 0) -> tuple[GaussianSet, int]:
    """Parse a GSAV block starting at offset; returns (set, end offset)."""
    if raw[offset:offset + 4] != GSAV_MAGIC:
        raise ValueError("not a GSAV block")
    (version,) = struct.unpack_from("<I", raw, offset + 4)
    if version != GSAV_VERSION:
        raise ValueError(f"unsupported GSAV version {version}")
    (n,) = struct.unpack_from("<Q", raw, offset + 8)
    off = offset + 16

    def take(count, shape):
        nonlocal off
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).astype(float)
        off += count * 4
        return arr.reshape(shape)

    positions = take(n * 3, (n, 3))
    log_scales = take(n, (n,))
    sh_coeffs = take(n * 48, (n, 16, 3))
    opacity_logits = take(n, (n,))
    return GaussianSet(positions, log_scales, sh_coeffs, opacity_logits), off


def save_gaussians(path, g: GaussianSet) -> None:
    Path(str(path)).write_bytes(gaussians_to_bytes(g))


def load_gaussians(path) -> GaussianSet:
    g, _ = gaussians_from_bytes(Path(str(path)).read_bytes())
    return g
