"""Dash noise estimators.

Any object with a ``dim`` attribute and an ``estimate(x, t)`` method that
returns eps_hat with the shape of ``x`` can drive the samplers.  Two are
provided: the closed-form posterior-mean denoiser for Gaussian data, used as
an exact oracle, and :class:`morse.nn.MlpDenoiser`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .diffusion import NoiseSchedule, x0_to_eps
from .errors import DomainError, ShapeError, SingularityError


@runtime_checkable
class DashEstimator(Protocol):
    dim: int

    def estimate(self, x: np.ndarray, t) -> np.ndarray:
        ...


@dataclass(frozen=True, eq=False)
class GaussianDataSpec:
    mu: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if mu.ndim != 1 or cov.shape != (mu.size, mu.size):
            raise ShapeError(f"cov must be {mu.size}x{mu.size}, got {cov.shape}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise DomainError("covariance is not symmetric")
        evals, evecs = np.linalg.eigh(cov)
        if evals.min() < -1e-12:
            raise DomainError(f"covariance is not PSD (min eigenvalue {evals.min():.3g})")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_eig", (np.clip(evals, 0.0, None), evecs))

    @property
    def dim(self) -> int:
        return self.mu.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        evals, evecs = self._eig
        z = rng.standard_normal((n, self.dim))
        return self.mu + (z * np.sqrt(evals)) @ evecs.T


def analytic_gaussian_x0(x_t, t, data: GaussianDataSpec, sched: NoiseSchedule) -> np.ndarray:
    """Posterior mean ``E[x0 | x_t]`` for ``x0 ~ N(mu, cov)``.

    Uses the eigenbasis of ``cov`` so the gain
    ``alpha * cov (alpha^2 cov + sigma^2 I)^-1`` is diagonal and per-row
    timesteps stay vectorized.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != data.dim:
        raise ShapeError(f"expected trailing dim {data.dim}, got {x_t.shape}")
    a, s = sched.coefficients(t)
    if np.any(s == 0):
        raise SingularityError("sigma_t = 0: the posterior mean is x_t itself, eps is undefined")
    evals, evecs = data._eig
    gain = a * evals / (a**2 * evals + s**2)
    centered = (x_t - a * data.mu) @ evecs
    return data.mu + (gain * centered) @ evecs.T


def analytic_gaussian_eps(x_t, t, data: GaussianDataSpec, sched: NoiseSchedule) -> np.ndarray:
    x0_hat = analytic_gaussian_x0(x_t, t, data, sched)
    return x0_to_eps(x_t, x0_hat, t, sched)


class AnalyticGaussianDash:
    """Bayes-optimal eps-predictor for Gaussian data."""

    def __init__(self, data: GaussianDataSpec, sched: NoiseSchedule):
        self.data = data
        self.sched = sched
        self.dim = data.dim

    def estimate(self, x, t):
        return analytic_gaussian_eps(x, t, self.data, self.sched)

    def gain(self, t) -> np.ndarray:
        """Matrix ``K_t`` with ``x0_hat = mu + K_t (x - alpha_t mu)``."""
        a, s = self.sched.coefficients(t)
        evals, evecs = self.data._eig
        return (evecs * (a * evals / (a**2 * evals + s**2))) @ evecs.T
