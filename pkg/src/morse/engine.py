"""Dual sampling with a Dash denoiser and a Dot residual estimator.

Every step of a Morse trajectory gets its noise estimate either from Dash,
``z = dash(x_i, t_i)``, or from Dot as a correction of the estimate at an
anchor step, ``z = z_s + dot(x_s, x_i, z_s, t_s, t_i)``.  Dash costs one LSD
(latency of one baseline step) and Dot costs ``1/N`` LSD.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .diffusion import NoiseSchedule
from .errors import ConfigurationError, RangeError, ScheduleError
from .samplers import (Executor, SamplerKind, StepRecord, TimeGrid, apply_step, initial_noise,
                       select_time_grid)

DEFAULT_SPEED_RATIO = 4.0


class ChainSource(enum.Enum):
    FROM_DASH = "dash"  # anchor = most recent Dash step
    FROM_PREVIOUS = "previous"  # anchor = the immediately preceding step


@runtime_checkable
class DotEstimator(Protocol):
    dim: int

    def residual(self, x_ts, x_ti, z_ts, t_s, t_i) -> np.ndarray:
        ...


@dataclass(frozen=True)
class InputMask:
    """Which anchor observations reach the Dot network; ``x_ti`` and ``t_i`` always do."""

    use_x_ts: bool = True
    use_z_ts: bool = True
    use_t_s: bool = True

    @classmethod
    def full(cls):
        return cls(True, True, True)

    @classmethod
    def empty(cls):
        return cls(False, False, False)

    def as_dict(self) -> dict:
        return {"use_x_ts": self.use_x_ts, "use_z_ts": self.use_z_ts, "use_t_s": self.use_t_s}


@dataclass(frozen=True)
class MorseSchedule:
    grid: TimeGrid
    executors: tuple
    speed_ratio: float = DEFAULT_SPEED_RATIO

    def __post_init__(self):
        ex = tuple(Executor(e) for e in self.executors)
        if len(ex) != self.grid.n_steps:
            raise ScheduleError(f"{len(ex)} executors for {self.grid.n_steps} grid transitions")
        if ex[0] is not Executor.DASH:
            raise ScheduleError("the first step must be a Dash step")
        if not self.speed_ratio > 1:
            raise ConfigurationError(f"speed ratio N must exceed 1, got {self.speed_ratio}")
        object.__setattr__(self, "executors", ex)

    @property
    def steps(self):
        return [(t, e) for (t, _), e in zip(self.grid.transitions(), self.executors)]

    @property
    def dash_count(self) -> int:
        return sum(e is Executor.DASH for e in self.executors)

    @property
    def dot_count(self) -> int:
        return len(self.executors) - self.dash_count


def build_morse_schedule(grid: TimeGrid, dash_count: int, speed_ratio: float = DEFAULT_SPEED_RATIO) -> MorseSchedule:
    """Spread ``dash_count`` Dash steps uniformly over the grid transitions.

    Dash runs at transition indices ``round(j * n / d)`` for ``j = 0..d-1``;
    for ``n = 6, d = 2`` that is Dash, Dot, Dot, Dash, Dot, Dot.
    """
    n = grid.n_steps
    if not 1 <= dash_count <= n:
        raise RangeError(f"dash count must lie in [1, {n}], got {dash_count}")
    dash_at = {int(np.floor(j * n / dash_count + 0.5)) for j in range(dash_count)}
    executors = tuple(Executor.DASH if i in dash_at else Executor.DOT for i in range(n))
    return MorseSchedule(grid, executors, speed_ratio)


def lsd_of(executors, speed_ratio: float) -> float:
    n_dash = sum(Executor(e) is Executor.DASH for e in executors)
    return n_dash + (len(executors) - n_dash) / speed_ratio


def lsd_cost(schedule: MorseSchedule) -> float:
    """Latency in baseline steps: 1 per Dash step plus 1/N per Dot step."""
    return lsd_of(schedule.executors, schedule.speed_ratio)


def upper_bound_speedup(n: int, k: int, speed_ratio: float) -> float:
    """``(n - k + N k) / n``: steps Morse fits in ``n`` LSD when ``k`` of them go to Dot."""
    if n < 1 or not 0 <= k < n:
        raise RangeError(f"need n >= 1 and 0 <= k < n, got n={n}, k={k}")
    if not speed_ratio > 1:
        raise ConfigurationError("speed ratio N must exceed 1")
    return (n - k + speed_ratio * k) / n


def recommended_exchanges(n: int, speed_ratio: float, lo: float = 2.0, hi: float = 3.0) -> list:
    """Values of ``k`` whose upper-bound speedup lies in ``[lo, hi]``."""
    return [k for k in range(n) if lo <= upper_bound_speedup(n, k, speed_ratio) <= hi]


def schedule_for_budget(T: int, budget: int, exchanged: int, speed_ratio: float = DEFAULT_SPEED_RATIO) -> MorseSchedule:
    """Trade ``exchanged`` of ``budget`` Dash steps for ``N`` Dot steps each.

    The result has ``budget - exchanged`` Dash and ``round(N * exchanged)``
    Dot steps, so its cost stays ``budget`` LSD when ``N * exchanged`` is an
    integer.
    """
    if budget < 1 or not 0 <= exchanged < budget:
        raise RangeError(f"need budget >= 1 and 0 <= exchanged < budget, got {budget}, {exchanged}")
    n_dash = budget - exchanged
    n_dot = int(round(speed_ratio * exchanged))
    grid = select_time_grid(T, n_dash + n_dot)
    return build_morse_schedule(grid, n_dash, speed_ratio)


def all_dash_schedule(grid: TimeGrid, speed_ratio: float = DEFAULT_SPEED_RATIO) -> MorseSchedule:
    return build_morse_schedule(grid, grid.n_steps, speed_ratio)


@dataclass
class Anchor:
    x: np.ndarray
    z: np.ndarray
    t: int


def morse_estimate(executor: Executor, x, t: int, anchor: Anchor | None, dash, dot,
                   chain: ChainSource = ChainSource.FROM_DASH):
    """Noise estimate for one step and the anchor to use afterwards."""
    if executor is Executor.DASH:
        z = dash.estimate(x, t)
        return z, Anchor(x, z, t)
    if anchor is None:
        raise ScheduleError("a Dot step needs a preceding Dash step")
    z = anchor.z + dot.residual(anchor.x, x, anchor.z, anchor.t, t)
    if chain is ChainSource.FROM_PREVIOUS:
        return z, Anchor(x, z, t)
    return z, anchor


class OracleDot:
    """Test Dot whose residual makes ``z_s + residual`` equal Dash at the current step."""

    def __init__(self, dash):
        self.dash = dash
        self.dim = dash.dim

    def residual(self, x_ts, x_ti, z_ts, t_s, t_i):
        return self.dash.estimate(x_ti, t_i) - z_ts


class ZeroDot:
    """Dot that never corrects: Morse reduces to plain jump sampling between Dash steps."""

    def __init__(self, dim: int):
        self.dim = dim

    def residual(self, x_ts, x_ti, z_ts, t_s, t_i):
        return np.zeros_like(np.asarray(z_ts, dtype=np.float64))


def make_oracle_dot(dash) -> OracleDot:
    return OracleDot(dash)


def morse_sample(dash, dot, schedule: MorseSchedule, sched: NoiseSchedule,
                 kind: SamplerKind = SamplerKind.DDIM, chain: ChainSource = ChainSource.FROM_DASH,
                 rng: np.random.Generator | None = None, n_chains: int = 1, x_T=None,
                 record: bool = True):
    """Run the interleaved Dash/Dot loop over ``schedule``.

    Random draws happen in the same order as :func:`morse.samplers.run_sampler`
    (``x_T`` first, then one draw per DDPM step), so both functions see
    identical noise for the same seed.  Returns ``(x_0, records, lsd)``.
    """
    rng = np.random.default_rng() if rng is None else rng
    x = initial_noise(rng, n_chains, dash.dim) if x_T is None else np.array(x_T, dtype=np.float64)
    anchor = None
    records = []
    for (t, t_prev), executor in zip(schedule.grid.transitions(), schedule.executors):
        z, anchor = morse_estimate(executor, x, t, anchor, dash, dot, chain)
        x_next = apply_step(kind, x, z, t, t_prev, sched, rng)
        if record:
            records.append(StepRecord(t, t_prev, x, x_next, z, executor))
        x = x_next
    return x, records, lsd_cost(schedule)
