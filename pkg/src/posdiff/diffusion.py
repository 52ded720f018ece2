"""Noise schedule, forward noising, deterministic DDIM reverse process.

Positions are arrays of shape ``(K, n)``. The arithmetic here only uses
scalar multiplication and addition, so ``forward_sample`` / ``ddim_step`` /
``simple_loss`` accept numpy arrays and torch tensors alike; the trainer
relies on that to form ``x_t`` inside the autograd graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

ZERO_CENTERED = "zero-centered"
STANDARD_GAUSSIAN = "standard-gaussian"
INIT_MODES = (ZERO_CENTERED, STANDARD_GAUSSIAN)


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed variance tables.

    ``beta[t - 1]`` and ``alpha[t - 1]`` hold step ``t`` (1-based, as in the
    usual notation) while ``alpha_bar`` has ``T + 1`` entries so that
    ``alpha_bar[t]`` indexes directly and ``alpha_bar[0] == 1``.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def sqrt_alpha_bar(self, t: int) -> float:
        return math.sqrt(self.alpha_bar[t])

    def sqrt_one_minus_alpha_bar(self, t: int) -> float:
        return math.sqrt(1.0 - self.alpha_bar[t])


@dataclass
class DiffusionConfig:
    T: int = 300
    inference_ratio: int = 10
    init_mode: str = ZERO_CENTERED
    position_dim: int = 2
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # sigma is pinned to zero; kept as a field so configs can state it
    sigma: float = field(default=0.0)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if not 1 <= self.inference_ratio <= self.T:
            raise ValueError(
                f"inference_ratio must lie in [1, T={self.T}], got {self.inference_ratio}"
            )
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if self.position_dim not in (1, 2):
            raise ValueError(f"position_dim must be 1 or 2, got {self.position_dim}")
        if self.sigma != 0.0:
            raise ValueError("only deterministic sampling (sigma=0) is supported")

    def schedule(self) -> NoiseSchedule:
        return build_linear_schedule(self.T, self.beta_start, self.beta_end)


def build_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear ramp of variances from ``beta_start`` to ``beta_end`` over ``T`` steps."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    T = int(T)
    if not (0.0 < beta_start < 1.0 and 0.0 < beta_end < 1.0):
        raise ValueError(f"betas must lie in (0, 1), got {beta_start}, {beta_end}")
    if beta_start > beta_end:
        raise ValueError(f"beta_start ({beta_start}) must not exceed beta_end ({beta_end})")

    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        steps = np.arange(T, dtype=np.float64) / (T - 1)
        beta = beta_start + steps * (beta_end - beta_start)
    alpha = 1.0 - beta
    alpha_bar = np.empty(T + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    # sequential product keeps alpha_bar[t] == alpha_bar[t-1] * alpha[t-1] exactly
    for t in range(1, T + 1):
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t - 1]

    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(T, beta, alpha, alpha_bar, float(beta_start), float(beta_end))


def _check_t(t: int, sched: NoiseSchedule, name: str = "t") -> int:
    if int(t) != t or not 0 <= t <= sched.T:
        raise ValueError(f"{name}={t} outside [0, {sched.T}]")
    return int(t)


def forward_sample(x0, t: int, eps, sched: NoiseSchedule):
    """Closed-form noising ``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``.

    ``t == 0`` is accepted and returns ``x0`` (``alpha_bar[0] == 1``).
    """
    t = _check_t(t, sched)
    if tuple(x0.shape) != tuple(eps.shape):
        raise ValueError(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    return sched.sqrt_alpha_bar(t) * x0 + sched.sqrt_one_minus_alpha_bar(t) * eps


def predict_x0(x_t, eps_hat, t: int, sched: NoiseSchedule):
    return (x_t - sched.sqrt_one_minus_alpha_bar(t) * eps_hat) / sched.sqrt_alpha_bar(t)


def ddim_step(x_t, eps_hat, t: int, t_prev: int, sched: NoiseSchedule):
    """One deterministic (sigma = 0) DDIM update from ``t`` to ``t_prev``."""
    t = _check_t(t, sched)
    t_prev = _check_t(t_prev, sched, "t_prev")
    if t_prev >= t:
        raise ValueError(f"t_prev ({t_prev}) must be smaller than t ({t})")
    if tuple(x_t.shape) != tuple(eps_hat.shape):
        raise ValueError(f"x_t shape {tuple(x_t.shape)} != eps_hat shape {tuple(eps_hat.shape)}")
    x0_hat = predict_x0(x_t, eps_hat, t, sched)
    return sched.sqrt_alpha_bar(t_prev) * x0_hat + sched.sqrt_one_minus_alpha_bar(t_prev) * eps_hat


def timestep_subsequence(T: int, r: int) -> list[int]:
    """Visited timesteps ``[T, T - r, T - 2r, ..., 0]``.

    ``0`` is always the final target, even when ``r`` does not divide ``T``.
    """
    if r < 1:
        raise ValueError(f"inference ratio must be >= 1, got {r}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if r > T:
        raise ValueError(f"inference ratio {r} exceeds T={T}")
    steps = list(range(T, 0, -r))
    steps.append(0)
    return steps


def simple_loss(eps, eps_hat):
    """Mean squared error over every scalar entry."""
    if tuple(eps.shape) != tuple(eps_hat.shape):
        raise ValueError(f"shape mismatch: {tuple(eps.shape)} vs {tuple(eps_hat.shape)}")
    diff = eps - eps_hat
    return (diff * diff).mean()


DenoiseFn = Callable[[np.ndarray, int, Any], np.ndarray]


def reverse_process(
    denoise_fn: DenoiseFn,
    H: Any,
    cfg: DiffusionConfig,
    sched: Optional[NoiseSchedule] = None,
    rng: Optional[np.random.Generator] = None,
    *,
    num_nodes: Optional[int] = None,
    callback: Optional[Callable[[int, np.ndarray], None]] = None,
) -> np.ndarray:
    """Run the DDIM chain from ``x_T`` down to ``x_0``.

    ``denoise_fn(x_t, t, H)`` must return an array shaped like ``x_t``; it is
    evaluated once per visited timestep except the final ``0``. ``callback``
    sees every visited state, including the initial one and the result.
    """
    if sched is None:
        sched = cfg.schedule()
    if sched.T != cfg.T:
        raise ValueError(f"schedule has T={sched.T} but config asks for T={cfg.T}")
    K = len(H) if num_nodes is None else int(num_nodes)
    if K < 1:
        raise ValueError("reverse_process needs at least one element")
    shape = (K, cfg.position_dim)

    if cfg.init_mode == ZERO_CENTERED:
        x = np.zeros(shape, dtype=np.float64)
    else:
        if rng is None:
            raise ValueError("standard-gaussian initialization needs an explicit rng")
        x = rng.standard_normal(shape)

    steps = timestep_subsequence(cfg.T, cfg.inference_ratio)
    if callback is not None:
        callback(steps[0], x.copy())
    for t, t_prev in zip(steps[:-1], steps[1:]):
        eps_hat = np.asarray(denoise_fn(x, t, H), dtype=np.float64)
        x = ddim_step(x, eps_hat, t, t_prev, sched)
        if callback is not None:
            callback(t_prev, x.copy())
    return x


def consistent_noise(x_t, x0_target, t: int, sched: NoiseSchedule):
    """The noise that would have produced ``x_t`` from ``x0_target`` at step ``t``.

    Plugging this into ``ddim_step`` makes its x0 estimate equal the target,
    which is how the oracle denoisers in tests and evaluation hooks work.
    """
    return (x_t - sched.sqrt_alpha_bar(t) * x0_target) / sched.sqrt_one_minus_alpha_bar(t)


def oracle_denoiser(target: np.ndarray, sched: NoiseSchedule) -> DenoiseFn:
    target = np.asarray(target, dtype=np.float64)

    def fn(x_t, t, H):
        return consistent_noise(x_t, target, t, sched)

    return fn
