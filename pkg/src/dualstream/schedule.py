"""
Shared noise schedule and the forward/reverse diffusion steps.

Both streams use one :class:`NoiseSchedule`.  Steps are 1-based: ``beta[0]``
is the noise strength of step ``t = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

Steps = Union[int, np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable per-step ``beta``, ``alpha = 1 - beta`` and ``alpha_bar = cumprod(alpha)`` (float64)."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def check_step(self, t: Steps) -> np.ndarray:
        t = np.asarray(t)
        if t.dtype.kind not in "iu" or t.size == 0 or t.min() < 1 or t.max() > self.T:
            raise ContractError(f"step index {t.tolist()} outside [1, {self.T}]")
        return t.astype(np.int64)


def make_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linearly spaced ``beta`` from ``beta_start`` to ``beta_end`` inclusive."""
    if not isinstance(T, (int, np.integer)) or isinstance(T, bool) or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(beta, alpha, alpha_bar)


def _per_sample(coef: np.ndarray, like: np.ndarray, dtype) -> np.ndarray:
    # scalar step -> scalar; per-batch steps -> broadcast over trailing axes
    if coef.ndim == 0:
        return coef.astype(dtype)
    return coef.reshape((-1,) + (1,) * (like.ndim - 1)).astype(dtype)


def q_sample(z0, t: Steps, eps, schedule: NoiseSchedule):
    """``sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps``.

    ``t`` is an int or one step per leading (batch) entry.  Works on numpy
    arrays and on :class:`Tensor` (differentiable in both arguments).
    """
    t = schedule.check_step(t)
    z0_arr = z0.data if isinstance(z0, Tensor) else np.asarray(z0)
    eps_arr = eps.data if isinstance(eps, Tensor) else np.asarray(eps)
    if z0_arr.shape != eps_arr.shape:
        raise DimensionError(f"eps shape {eps_arr.shape} != z0 shape {z0_arr.shape}")
    if t.ndim == 1 and t.shape[0] != z0_arr.shape[0]:
        raise DimensionError(f"{t.shape[0]} steps for batch of {z0_arr.shape[0]}")
    ab = schedule.alpha_bar[t - 1]
    dtype = z0_arr.dtype
    a = _per_sample(np.sqrt(ab), z0_arr, dtype)
    s = _per_sample(np.sqrt(1.0 - ab), z0_arr, dtype)
    return a * z0 + s * eps


def p_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: NoiseSchedule,
           noise: np.ndarray) -> np.ndarray:
    """One ancestral step ``z_t -> z_{t-1}`` with ``sigma_t^2 = beta_t``; ``noise`` is ignored at ``t = 1``."""
    t = int(schedule.check_step(t))
    z_t = np.asarray(z_t)
    if np.shape(eps_hat) != z_t.shape:
        raise DimensionError(f"eps_hat shape {np.shape(eps_hat)} != z_t shape {z_t.shape}")
    beta = schedule.beta[t - 1]
    alpha = schedule.alpha[t - 1]
    ab = schedule.alpha_bar[t - 1]
    dtype = z_t.dtype
    mean = (z_t - (beta / np.sqrt(1.0 - ab)).astype(dtype) * eps_hat) / np.sqrt(alpha).astype(dtype)
    if t == 1:
        return mean
    if np.shape(noise) != z_t.shape:
        raise DimensionError(f"noise shape {np.shape(noise)} != z_t shape {z_t.shape}")
    return mean + np.sqrt(beta).astype(dtype) * noise


def respace(schedule: NoiseSchedule, steps: int) -> tuple[NoiseSchedule, np.ndarray]:
    """Sub-schedule over ``steps`` evenly spaced original steps.

    Returns the shorter schedule (whose ``alpha_bar`` equals the original at
    the kept steps) and the kept original 1-based step indices, so a network
    trained on the full schedule is queried with ``kept[i - 1]`` at reduced
    step ``i``.  ``steps == T`` returns the schedule unchanged.
    """
    if not isinstance(steps, (int, np.integer)) or steps < 1 or steps > schedule.T:
        raise ConfigError(f"sampling steps must lie in [1, {schedule.T}], got {steps!r}")
    kept = np.round(np.linspace(1, schedule.T, int(steps))).astype(np.int64)
    if steps == schedule.T:
        return schedule, kept
    alpha_bar = schedule.alpha_bar[kept - 1]
    alpha = alpha_bar / np.concatenate([[1.0], alpha_bar[:-1]])
    beta = 1.0 - alpha
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(beta, alpha, alpha_bar), kept
