"""Diffusion sampling math: scaled-linear beta schedule, zero-SNR rescale,
deterministic DDIM stepping in epsilon- and v-prediction form, and
classifier-free guidance.

alpha_bar denotes the cumulative product prod(1 - beta_i). The timestep
subsequence uses "leading" spacing t_k = round(T/steps * k), descending.
A t_prev of FINAL_STEP denotes the terminal update to alpha_bar = 1 (the
output is the current x0 estimate).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

FINAL_STEP = -1

DEFAULT_T = 1000
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012


@dataclass
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def num_steps(self) -> int:
        return len(self.betas)


@dataclass
class SamplerConfig:
    steps: int = 20
    guidance: float = 3.5
    prediction: str = "epsilon"  # or "v"
    zero_snr: bool = False

    def validate(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.prediction not in ("epsilon", "v"):
            raise ValueError("prediction must be 'epsilon' or 'v'")


def make_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                  beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Scaled-linear schedule: beta_i = (sqrt(b0) + i/(T-1) (sqrt(b1)-sqrt(b0)))^2."""
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if T < 2:
        raise ValueError("need at least two steps")
    roots = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), T)
    betas = roots**2
    betas[0] = beta_start
    betas[-1] = beta_end
    alphas = 1.0 - betas
    return NoiseSchedule(betas, alphas, np.cumprod(alphas))


def rescale_zero_snr(s: NoiseSchedule) -> NoiseSchedule:
    """Linearly rescale sqrt(alpha_bar) so the terminal value is exactly 0
    while the first value is preserved."""
    sq = np.sqrt(s.alpha_bars)
    sq0 = sq[0]
    sqT = sq[-1]
    sq_new = (sq - sqT) * sq0 / (sq0 - sqT)
    alpha_bars = sq_new**2
    alpha_bars[-1] = 0.0
    alphas = np.empty_like(alpha_bars)
    alphas[0] = alpha_bars[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        alphas[1:] = alpha_bars[1:] / alpha_bars[:-1]
    return NoiseSchedule(1.0 - alphas, alphas, alpha_bars)


def cfg(eps_cond: np.ndarray, eps_uncond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance: (1 + w) * cond - w * uncond, evaluated as
    cond + w * (cond - uncond) so equal predictions pass through exactly."""
    eps_cond = np.asarray(eps_cond, dtype=float)
    eps_uncond = np.asarray(eps_uncond, dtype=float)
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError("shape mismatch between conditional and unconditional predictions")
    return eps_cond + w * (eps_cond - eps_uncond)


def v_to_eps_x0(z_t: np.ndarray, v: np.ndarray, alpha_bar: float):
    """Recover (x0, eps) from a v prediction at noise level alpha_bar."""
    sq_a = np.sqrt(alpha_bar)
    sq_1ma = np.sqrt(1.0 - alpha_bar)
    x0 = sq_a * z_t - sq_1ma * v
    eps = sq_a * v + sq_1ma * z_t
    return x0, eps


def eps_to_v(z_t: np.ndarray, eps: np.ndarray, alpha_bar: float) -> np.ndarray:
    """The v target for a given (z_t, eps) pair at noise level alpha_bar."""
    sq_a = np.sqrt(alpha_bar)
    sq_1ma = np.sqrt(1.0 - alpha_bar)
    x0 = (z_t - sq_1ma * eps) / sq_a
    return sq_a * eps - sq_1ma * x0


def ddim_step(z_t: np.ndarray, pred: np.ndarray, t: int, t_prev: int,
              schedule: NoiseSchedule, prediction_kind: str = "epsilon") -> np.ndarray:
    """One deterministic (eta = 0) DDIM update from t to t_prev < t.

    t_prev = FINAL_STEP targets alpha_bar = 1, i.e. returns the x0 estimate.
    """
    if t_prev != FINAL_STEP and not 0 <= t_prev < t:
        raise ValueError("t_prev must be FINAL_STEP or in [0, t)")
    z_t = np.asarray(z_t, dtype=float)
    pred = np.asarray(pred, dtype=float)
    ab_t = float(schedule.alpha_bars[t])
    ab_prev = 1.0 if t_prev == FINAL_STEP else float(schedule.alpha_bars[t_prev])
    if prediction_kind == "epsilon":
        if ab_t == 0.0:
            raise ValueError("epsilon prediction undefined at alpha_bar = 0; use v prediction")
        eps = pred
        x0 = (z_t - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
    elif prediction_kind == "v":
        x0, eps = v_to_eps_x0(z_t, pred, ab_t)
    else:
        raise ValueError("prediction_kind must be 'epsilon' or 'v'")
    return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps


def sample_timesteps(T: int, steps: int) -> list[int]:
    """Leading-spaced descending subsequence t_k = round(T/steps * k)."""
    ts = sorted({int(round(T / steps * k)) for k in range(steps)}, reverse=True)
    return [min(t, T - 1) for t in ts]


def ddim_sample(denoiser: Callable[[np.ndarray, int], np.ndarray],
                sampler: SamplerConfig, schedule: NoiseSchedule, z_T: np.ndarray,
                uncond_denoiser: Callable[[np.ndarray, int], np.ndarray] | None = None) -> np.ndarray:
    """Iterated DDIM over the leading-spaced subsequence, ending at x0.

    With an unconditional denoiser and nonzero guidance, the two predictions
    are combined by classifier-free guidance at every step.
    """
    sampler.validate()
    sched = rescale_zero_snr(schedule) if sampler.zero_snr else schedule
    ts = sample_timesteps(sched.num_steps, sampler.steps)
    z = np.asarray(z_T, dtype=float)
    for i, t in enumerate(ts):
        pred = denoiser(z, t)
        if uncond_denoiser is not None and sampler.guidance != 0.0:
            pred = cfg(pred, uncond_denoiser(z, t), sampler.guidance)
        t_prev = ts[i + 1] if i + 1 < len(ts) else FINAL_STEP
        z = ddim_step(z, pred, t, t_prev, sched, sampler.prediction)
    return z


@dataclass
class LinearGaussianToy:
    """1-D Gaussian data x0 ~ N(mean, std^2) with the exact posterior denoiser.

    The optimal epsilon prediction is linear in z, which makes every DDIM
    trajectory an affine map that can be composed in closed form.
    """

    mean: float = 0.7
    std: float = 0.4

    def eps_coeffs(self, schedule: NoiseSchedule, t: int) -> tuple[float, float]:
        """(a, b) with eps_hat(z) = a z + b at timestep t."""
        ab = float(schedule.alpha_bars[t])
        sq_a = np.sqrt(ab)
        sq_1ma = np.sqrt(1.0 - ab)
        var_z = ab * self.std**2 + (1.0 - ab)
        # E[x0 | z] = mean + k (z - sq_a mean) with k = sq_a std^2 / var_z,
        # so eps = (z - sq_a E[x0|z]) / sq_1ma is affine in z
        k = sq_a * self.std**2 / var_z
        a = (1.0 - sq_a * k) / sq_1ma
        b = -sq_a * self.mean * (1.0 - sq_a * k) / sq_1ma
        return a, b

    def denoiser(self, schedule: NoiseSchedule) -> Callable[[np.ndarray, int], np.ndarray]:
        def eps_hat(z, t):
            a, b = self.eps_coeffs(schedule, t)
            return a * np.asarray(z, dtype=float) + b
        return eps_hat

    def marginal(self, schedule: NoiseSchedule, t: int) -> tuple[float, float]:
        """(mean, std) of z_t under the forward process."""
        ab = float(schedule.alpha_bars[t])
        return np.sqrt(ab) * self.mean, float(np.sqrt(ab * self.std**2 + (1.0 - ab)))

    def continuum_limit(self, schedule: NoiseSchedule, z_T: np.ndarray) -> np.ndarray:
        """Probability-flow limit: the affine transport between marginals."""
        mu_T, sig_T = self.marginal(schedule, schedule.num_steps - 1)
        # target: the data distribution itself (alpha_bar = 1 endpoint)
        return self.mean + (self.std / sig_T) * (np.asarray(z_T, dtype=float) - mu_T)


def convergence_experiment(steps_list=(10, 20, 50), seed: int = 0,
                           n_samples: int = 64) -> list[tuple[int, float]]:
    """Max deviation of the DDIM endpoint from the continuum transport map,
    per step count. Emitted by the ddim-demo command as (steps, error) rows."""
    schedule = make_schedule()
    toy = LinearGaussianToy()
    rng = np.random.default_rng(seed)
    mu_T, sig_T = toy.marginal(schedule, schedule.num_steps - 1)
    z_T = rng.normal(mu_T, sig_T, n_samples)
    target = toy.continuum_limit(schedule, z_T)
    denoiser = toy.denoiser(schedule)
    rows = []
    for steps in steps_list:
        cfg_ = SamplerConfig(steps=steps, guidance=0.0)
        z0 = ddim_sample(denoiser, cfg_, schedule, z_T)
        rows.append((steps, float(np.abs(z0 - target).max())))
    return rows
