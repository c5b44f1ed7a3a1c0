import numpy as np

from deskavatar import fileio
from deskavatar.splat import GaussianSet

from conftest import random_scene


def test_image_png_roundtrip(tmp_path, rng):
    img = rng.uniform(size=(12, 17, 3))
    path = tmp_path / "img.png"
    fileio.save_image_png(path, img)
    back = fileio.load_image_png(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_mask_png_roundtrip(tmp_path, rng):
    mask = rng.uniform(size=(9, 14)) > 0.5
    path = tmp_path / "mask.png"
    fileio.save_mask_png(path, mask)
    assert np.array_equal(fileio.load_mask_png(path), mask)


def test_depth_png_roundtrip(tmp_path, rng):
    depth = rng.uniform(0.5, 8.0, size=(10, 10))
    depth[0, :3] = np.inf  # no-coverage pixels
    path = tmp_path / "depth.png"
    fileio.save_depth_png(path, depth)
    back = fileio.load_depth_png(path)
    quant = (fileio.DEPTH_FAR - fileio.DEPTH_NEAR) / 65534.0
    finite = np.isfinite(depth)
    assert np.all(np.isinf(back[~finite]))
    assert np.abs(back[finite] - depth[finite]).max() <= quant


def test_gaussians_roundtrip(tmp_path, rng):
    g = random_scene(rng, 7)
    path = tmp_path / "scene.gsav"
    fileio.save_gaussians(path, g)
    back = fileio.load_gaussians(path)
    assert len(back) == len(g)
    # storage is float32
    for a, b in ((g.positions, back.positions), (g.log_scales, back.log_scales),
                 (g.sh_coeffs, back.sh_coeffs), (g.opacity_logits, back.opacity_logits)):
        assert np.array_equal(a.astype(np.float32).astype(float), b)


def test_gsav_header(tmp_path):
    path = tmp_path / "empty.gsav"
    fileio.save_gaussians(path, GaussianSet.empty())
    raw = path.read_bytes()
    assert raw[:4] == b"GSAV"
    assert len(raw) == 16
