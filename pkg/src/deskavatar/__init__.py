"""Desk-scale avatar numerics toolkit.

Subpackages cover the full pipeline: Gaussian-splat scenes and rendering
(`splat`), the articulated capsule body (`avatar`, `body`), splat-avatar
training (`trainer`), 2D pose alignment and temporal smoothing (`pose`),
face fusion (`fusion`), body fitting from keypoints (`fitting`), diffusion
sampler math (`sched`), and the synthetic ground-truth oracle (`synth`).
"""

__version__ = "0.1.0"

from .splat import Camera, GaussianSet  # noqa: F401
