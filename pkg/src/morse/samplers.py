"""Jump-sampling time grids, the DDIM / DDPM-ancestral update maps and a
dense sampling loop that records the trajectory."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule, check_timestep, eps_to_x0
from .errors import OrderingError, RangeError, ShapeError


class SamplerKind(enum.Enum):
    DDIM = "ddim"
    DDPM = "ddpm"  # ancestral, eta = 1


class Executor(enum.Enum):
    DASH = "dash"
    DOT = "dot"


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing visited timesteps ``T = t_n > ... > t_0 = 0``."""

    points: tuple

    def __post_init__(self):
        pts = tuple(int(p) for p in self.points)
        if len(pts) < 2:
            raise RangeError("a time grid needs at least two points")
        if pts[-1] != 0:
            raise RangeError("a time grid must end at t = 0")
        if any(a <= b for a, b in zip(pts, pts[1:])):
            raise OrderingError(f"grid is not strictly decreasing: {pts}")
        object.__setattr__(self, "points", pts)

    @property
    def n_steps(self) -> int:
        return len(self.points) - 1

    def transitions(self):
        return list(zip(self.points[:-1], self.points[1:]))

    def __len__(self):
        return len(self.points)


@dataclass
class StepRecord:
    t_in: int
    t_out: int
    x_in: np.ndarray
    x_out: np.ndarray
    z: np.ndarray
    executor: Executor


def select_time_grid(T: int, n: int, strategy: str = "uniform") -> TimeGrid:
    """Uniform grid ``t_i = round(i * T / n)`` for ``i = n..0``.

    >>> select_time_grid(1000, 4).points
    (1000, 750, 500, 250, 0)
    """
    if strategy != "uniform":
        raise ValueError(f"unknown grid strategy {strategy!r}")
    if n < 1 or n > T:
        raise RangeError(f"need 1 <= n <= T, got n={n}, T={T}")
    # half-up rounding; np.round would send 2.5 -> 2
    pts = [int(np.floor(i * T / n + 0.5)) for i in range(n, -1, -1)]
    return TimeGrid(tuple(dict.fromkeys(pts)))


def _check_step(x_t, z, t, t_prev, sched):
    x_t = np.asarray(x_t, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x_t.shape != z.shape:
        raise ShapeError(f"x_t {x_t.shape} and z {z.shape} differ")
    t = check_timestep(t, sched.T)
    t_prev = check_timestep(t_prev, sched.T)
    if np.any(np.asarray(t_prev) > np.asarray(t)):
        raise OrderingError(f"t_prev={t_prev} is after t={t}")
    return x_t, z, t, t_prev


def ddim_step(x_t, z, t, t_prev, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic DDIM map: jump to ``t_prev`` toward the same estimate."""
    x_t, z, t, t_prev = _check_step(x_t, z, t, t_prev, sched)
    if np.all(np.asarray(t) == np.asarray(t_prev)):
        return x_t.copy()
    x0_hat = eps_to_x0(x_t, z, t, sched)
    a_prev, s_prev = sched.coefficients(t_prev)
    return a_prev * x0_hat + s_prev * z


def ddpm_posterior_std(t, t_prev, sched: NoiseSchedule):
    a, s = sched.coefficients(t)
    a_prev, s_prev = sched.coefficients(t_prev)
    with np.errstate(divide="ignore", invalid="ignore"):
        var = (s_prev**2 / s**2) * (1.0 - a**2 / a_prev**2)
    var = np.where(s == 0, 0.0, var)
    return np.sqrt(np.clip(var, 0.0, None))


def ddpm_step(x_t, z, t, t_prev, sched: NoiseSchedule, noise) -> np.ndarray:
    """Ancestral step of the generalized DDIM family with eta = 1.

    ``sigma_tilde^2 = (sigma_prev^2 / sigma_t^2) (1 - alpha_t^2 / alpha_prev^2)``
    is the posterior variance of ``q(x_prev | x_t, x0)`` across the jump.
    """
    x_t, z, t, t_prev = _check_step(x_t, z, t, t_prev, sched)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x_t.shape:
        raise ShapeError(f"noise {noise.shape} does not match x_t {x_t.shape}")
    if np.all(np.asarray(t) == np.asarray(t_prev)):
        return x_t.copy()
    x0_hat = eps_to_x0(x_t, z, t, sched)
    a_prev, s_prev = sched.coefficients(t_prev)
    s_tilde = ddpm_posterior_std(t, t_prev, sched)
    direction = np.sqrt(np.clip(s_prev**2 - s_tilde**2, 0.0, None))
    return a_prev * x0_hat + direction * z + s_tilde * noise


def apply_step(kind: SamplerKind, x, z, t, t_prev, sched, rng) -> np.ndarray:
    """One update of the chosen sampler. DDPM draws its noise from ``rng``."""
    if kind is SamplerKind.DDIM:
        return ddim_step(x, z, t, t_prev, sched)
    noise = rng.standard_normal(np.shape(x))
    return ddpm_step(x, z, t, t_prev, sched, noise)


def initial_noise(rng: np.random.Generator, n_chains: int, dim: int) -> np.ndarray:
    return rng.standard_normal((n_chains, dim))


def run_sampler(dash, grid: TimeGrid, sched: NoiseSchedule, kind: SamplerKind = SamplerKind.DDIM,
                rng: np.random.Generator | None = None, n_chains: int = 1, x_T=None,
                record: bool = True):
    """Dense sampling: one Dash evaluation per grid transition.

    Draws ``x_T ~ N(0, I)`` from ``rng`` (unless ``x_T`` is given), then, for
    DDPM, one noise draw per step from the same stream.  Returns the final
    batch ``(n_chains, dim)`` and the list of step records (empty when
    ``record`` is false).
    """
    if grid.points[0] > sched.T:
        raise RangeError("grid starts after the schedule horizon")
    rng = np.random.default_rng() if rng is None else rng
    x = initial_noise(rng, n_chains, dash.dim) if x_T is None else np.array(x_T, dtype=np.float64)
    records = []
    for t, t_prev in grid.transitions():
        z = dash.estimate(x, t)
        x_next = apply_step(kind, x, z, t, t_prev, sched, rng)
        if record:
            records.append(StepRecord(t, t_prev, x, x_next, z, Executor.DASH))
        x = x_next
    return x, records
