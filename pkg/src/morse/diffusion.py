"""Variance-preserving noise schedules and the closed-form forward process.

A schedule stores per-timestep signal/noise coefficients ``alpha[t]`` and
``sigma[t]`` for ``t = 0..T`` with ``alpha**2 + sigma**2 == 1``.  Index 0 is
clean data: ``alpha[0] = 1`` and ``sigma[0] = 0``.

Every function here accepts a single vector of shape ``(dim,)`` or a batch of
shape ``(batch, dim)``; ``t`` may be a scalar or a per-row integer array.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, RangeError, ShapeError, SingularityError

VP_TOL = 1e-12


class Parameterization(enum.Enum):
    NOISE = "noise"  # network output is eps_hat
    DATA = "data"  # network output is x0_hat


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    alpha: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.float64)
        sigma = np.array(self.sigma, dtype=np.float64)
        if alpha.ndim != 1 or alpha.shape != sigma.shape or alpha.size < 2:
            raise ConfigurationError("alpha and sigma must be 1-D arrays of equal length T+1 >= 2")
        if alpha[0] != 1.0 or sigma[0] != 0.0:
            raise ConfigurationError("t = 0 must be clean data (alpha_0 = 1, sigma_0 = 0)")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(sigma))):
            raise ConfigurationError("schedule coefficients must be finite")
        if np.max(np.abs(alpha**2 + sigma**2 - 1.0)) > VP_TOL:
            raise ConfigurationError("schedule is not variance preserving")
        if np.any(np.diff(alpha) >= 0) or np.any(np.diff(sigma) <= 0):
            raise ConfigurationError("alpha must strictly decrease and sigma strictly increase")
        alpha.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_alphas(cls, alpha) -> "NoiseSchedule":
        alpha = np.asarray(alpha, dtype=np.float64)
        return cls(alpha, np.sqrt(np.clip(1.0 - alpha**2, 0.0, None)))

    @property
    def T(self) -> int:
        return self.alpha.size - 1

    def fingerprint(self) -> str:
        """SHA-256 over the little-endian bytes of alpha then sigma."""
        h = hashlib.sha256()
        h.update(self.alpha.astype("<f8").tobytes())
        h.update(self.sigma.astype("<f8").tobytes())
        return h.hexdigest()

    def coefficients(self, t):
        """Return ``(alpha_t, sigma_t)`` broadcastable against a batch."""
        t = check_timestep(t, self.T)
        a, s = self.alpha[t], self.sigma[t]
        if np.ndim(t) == 1:
            return a[:, None], s[:, None]
        return a, s


def make_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """DDPM linear-beta schedule, ``alpha_t = sqrt(prod_{s<=t} (1 - beta_s))``."""
    if int(T) != T or T < 1:
        raise ConfigurationError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_start < 1.0 and 0.0 < beta_end < 1.0):
        raise ConfigurationError("betas must lie in (0, 1)")
    if beta_start > beta_end:
        raise ConfigurationError("beta_start must not exceed beta_end")
    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(np.sqrt(alpha_bar), np.sqrt(1.0 - alpha_bar))


def check_timestep(t, T: int):
    arr = np.asarray(t)
    if arr.ndim > 1:
        raise ShapeError("timestep must be a scalar or a 1-D array")
    if not np.issubdtype(arr.dtype, np.integer):
        if np.any(arr != np.round(arr)):
            raise RangeError(f"timesteps must be integers, got {t!r}")
        arr = arr.astype(np.int64)
    if np.any(arr < 0) or np.any(arr > T):
        raise RangeError(f"timestep outside [0, {T}]: {t!r}")
    return int(arr) if arr.ndim == 0 else arr


def _check_pair(a: np.ndarray, b: np.ndarray, t):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if np.ndim(t) == 1 and (a.ndim != 2 or a.shape[0] != len(t)):
        raise ShapeError("per-row timesteps need a (batch, dim) input of matching length")


def forward_diffuse(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """Sample ``x_t = alpha_t * x0 + sigma_t * eps``."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_pair(x0, eps, t)
    a, s = sched.coefficients(t)
    return a * x0 + s * eps


def eps_to_x0(x_t, eps_hat, t, sched: NoiseSchedule) -> np.ndarray:
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _check_pair(x_t, eps_hat, t)
    a, s = sched.coefficients(t)
    if np.any(a == 0):
        raise SingularityError("alpha_t = 0: cannot recover x0")
    return (x_t - s * eps_hat) / a


def x0_to_eps(x_t, x0_hat, t, sched: NoiseSchedule) -> np.ndarray:
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    _check_pair(x_t, x0_hat, t)
    a, s = sched.coefficients(t)
    if np.any(s == 0):
        raise SingularityError("sigma_t = 0: noise is undefined at clean data")
    return (x_t - a * x0_hat) / s


def to_noise_prediction(z, x_t, t, sched: NoiseSchedule, kind: Parameterization) -> np.ndarray:
    """Convert an estimate of either parameterization to eps_hat."""
    if kind is Parameterization.NOISE:
        return np.asarray(z, dtype=np.float64)
    return x0_to_eps(x_t, z, t, sched)
