import numpy as np
import pytest

from deskavatar.splat import Camera, GaussianSet


def rel_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    """Max absolute difference normalized by the largest gradient magnitude."""
    analytic = np.asarray(analytic, dtype=float).ravel()
    fd = np.asarray(fd, dtype=float).ravel()
    scale = max(np.abs(fd).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - fd).max(initial=0.0) / scale)


def central_diff(fun, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function over a flat vector."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp.flat[i] += step
        xm = x.copy()
        xm.flat[i] -= step
        grad.flat[i] = (fun(xp) - fun(xm)) / (2.0 * step)
    return grad


def simple_camera(size=32, f=60.0, dist=2.5) -> Camera:
    """Camera on +z looking at the origin, y-down image convention."""
    rot = np.diag([1.0, -1.0, -1.0])
    center = np.array([0.0, 0.0, dist])
    return Camera((f, f), ((size - 1) / 2.0, (size - 1) / 2.0),
                  rot, -rot @ center, (size, size))


def random_scene(rng: np.random.Generator, n: int = 12, spread=0.5) -> GaussianSet:
    """Seeded random Gaussian cloud with colors kept inside (0, 1)."""
    positions = rng.uniform(-spread, spread, (n, 3))
    log_scales = np.log(rng.uniform(0.02, 0.06, n))
    sh = np.zeros((n, 16, 3))
    sh[:, 0, :] = rng.uniform(-0.8, 0.8, (n, 3))
    sh[:, 1:, :] = rng.normal(0.0, 0.05, (n, 15, 3))
    logits = rng.uniform(-1.5, 1.5, n)
    return GaussianSet(positions, log_scales, sh, logits)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
