"""Training pairs, loss and training loop for a Dot residual estimator.

One example: diffuse clean data to ``t_s``, take the Dash estimate ``z_s``
there, jump with the sampler map to ``t_o < t_s``, evaluate Dash again to get
``z_o`` and use ``z_o - z_s`` as the residual target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoiseSchedule, forward_diffuse
from .errors import ConfigurationError, ContractError, RangeError
from .nn import adam_update
from .samplers import SamplerKind, ddim_step, ddpm_step
from .seeding import rng_for
from .training import OptConfig, check_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepPair:
    t_s: int
    t_o: int

    def __post_init__(self):
        if not self.t_s > self.t_o >= 0:
            raise RangeError(f"need t_s > t_o >= 0, got ({self.t_s}, {self.t_o})")


def sample_step_pairs(rng: np.random.Generator, T: int, size: int, max_gap: int | None = None):
    """``size`` pairs uniform over ``{(t_s, t_o): T >= t_s > t_o >= 0}``.

    With ``max_gap`` the pairs are additionally conditioned (by rejection) on
    ``t_s - t_o <= max_gap``.  Returns two int arrays.
    """
    if T < 2:
        raise ConfigurationError("need T >= 2 to sample step pairs")
    if max_gap is not None and max_gap < 1:
        raise ConfigurationError(f"max_gap must be >= 1, got {max_gap}")
    t_s = np.empty(size, dtype=np.int64)
    t_o = np.empty(size, dtype=np.int64)
    filled = 0
    while filled < size:
        need = size - filled
        a = rng.integers(0, T + 1, size=need)
        b = rng.integers(0, T, size=need)
        b = b + (b >= a)  # uniform over values != a
        hi, lo = np.maximum(a, b), np.minimum(a, b)
        keep = np.ones(need, bool) if max_gap is None else (hi - lo) <= max_gap
        k = int(keep.sum())
        t_s[filled:filled + k] = hi[keep]
        t_o[filled:filled + k] = lo[keep]
        filled += k
    return t_s, t_o


def sample_step_pair(rng: np.random.Generator, T: int, max_gap: int | None = None) -> StepPair:
    t_s, t_o = sample_step_pairs(rng, T, 1, max_gap)
    return StepPair(int(t_s[0]), int(t_o[0]))


@dataclass
class DotTrainingExample:
    """A batch of training examples; ``target = z_to - z_ts``.

    ``z_to`` is the Dash evaluation at ``(x_to, t_o)`` itself; ``z_ts + target``
    reproduces it only up to rounding.
    """

    x_ts: np.ndarray
    x_to: np.ndarray
    z_ts: np.ndarray
    t_s: np.ndarray
    t_o: np.ndarray
    target: np.ndarray
    z_to: np.ndarray | None = None

    def __len__(self):
        return len(self.target)


def make_training_examples(x0, eps, t_s, t_o, dash, sched: NoiseSchedule,
                           kind: SamplerKind = SamplerKind.DDIM, rng=None, rollout_hops: int = 1):
    """Build a batch of Dot examples from clean data and noise.

    ``rollout_hops > 1`` reaches ``t_o`` through that many uniform hops,
    re-evaluating Dash at each intermediate point, instead of one jump on the
    stale estimate ``z_ts``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    t_s = np.broadcast_to(np.asarray(t_s, dtype=np.int64), (len(x0),)).copy()
    t_o = np.broadcast_to(np.asarray(t_o, dtype=np.int64), (len(x0),)).copy()
    if np.any(sched.sigma[t_s] == 0):
        raise RangeError("t_s must have sigma > 0")
    if kind is SamplerKind.DDPM and rng is None:
        raise ContractError("the DDPM sampler map needs an rng for its noise")
    x_ts = forward_diffuse(x0, t_s, eps, sched)
    z_ts = dash.estimate(x_ts, t_s)
    x, z, t = x_ts, z_ts, t_s
    for h in range(1, rollout_hops + 1):
        nxt = t_s - np.floor_divide(h * (t_s - t_o), rollout_hops)
        if kind is SamplerKind.DDIM:
            x = ddim_step(x, z, t, nxt, sched)
        else:
            x = ddpm_step(x, z, t, nxt, sched, rng.standard_normal(x.shape))
        t = nxt
        if h < rollout_hops:
            z = dash.estimate(x, t)
    z_to = dash.estimate(x, t_o)
    return DotTrainingExample(x_ts, x, z_ts, t_s, t_o, z_to - z_ts, z_to)


def make_training_example(x0, eps, pair: StepPair, dash, kind: SamplerKind, sched: NoiseSchedule,
                          rng=None) -> DotTrainingExample:
    """Single-example form of :func:`make_training_examples`."""
    batch = make_training_examples(np.atleast_2d(x0), np.atleast_2d(eps), pair.t_s, pair.t_o,
                                   dash, sched, kind, rng)
    return DotTrainingExample(batch.x_ts[0], batch.x_to[0], batch.z_ts[0], pair.t_s, pair.t_o,
                              batch.target[0], batch.z_to[0])


def dot_loss(dot, batch: DotTrainingExample) -> float:
    """Mean over the batch of ``||target - residual||^2``."""
    if len(np.atleast_1d(batch.t_s)) == 0:
        raise ContractError("empty batch")
    r = dot.residual(batch.x_ts, batch.x_to, batch.z_ts, batch.t_s, batch.t_o)
    diff = np.atleast_2d(batch.target - r)
    return float(np.mean(np.sum(diff**2, axis=1)))


@dataclass
class DotTrainConfig:
    iterations: int = 4000
    batch_size: int = 256
    seed: int = 0
    max_gap: int | None = None
    sampler: SamplerKind = SamplerKind.DDIM
    rollout_hops: int = 1
    validation_size: int = 4096
    opt: OptConfig = field(default_factory=OptConfig)


@dataclass
class ValidationReport:
    trained_mse: float
    zero_mse: float
    mask: dict
    size: int

    def as_dict(self) -> dict:
        return {"trained_mse": self.trained_mse, "zero_predictor_mse": self.zero_mse,
                "relative_mse": self.trained_mse / self.zero_mse if self.zero_mse else float("nan"),
                "mask": self.mask, "validation_size": self.size}


def draw_examples(rng, dataset, dash, sched, size: int, cfg: DotTrainConfig) -> DotTrainingExample:
    x0 = dataset.sample(rng, size)
    eps = rng.standard_normal(x0.shape)
    t_s, t_o = sample_step_pairs(rng, sched.T, size, cfg.max_gap)
    return make_training_examples(x0, eps, t_s, t_o, dash, sched, cfg.sampler, rng, cfg.rollout_hops)


def validate_dot(dot, dash, dataset, sched, cfg: DotTrainConfig) -> ValidationReport:
    batch = draw_examples(rng_for(cfg.seed, "valid"), dataset, dash, sched, cfg.validation_size, cfg)
    zero = float(np.mean(np.sum(batch.target**2, axis=1)))
    return ValidationReport(dot_loss(dot, batch), zero, dot.mask.as_dict(), cfg.validation_size)


def train_dot(dash, dot, dataset, sched: NoiseSchedule, cfg: DotTrainConfig | None = None,
              log_every: int = 0):
    """Fit the trainable parameters of ``dot``; the Dash model is only evaluated.

    Returns ``(dot, losses, report)`` where ``report`` compares held-out
    residual MSE against the zero predictor.
    """
    cfg = cfg or DotTrainConfig()
    if cfg.iterations < 1 or cfg.batch_size < 1 or cfg.rollout_hops < 1:
        raise ConfigurationError("iterations, batch_size and rollout_hops must be positive")
    state = cfg.opt.make_state(dot.params)
    rng = rng_for(cfg.seed, "train", 1)
    losses = np.empty(cfg.iterations)
    for it in range(cfg.iterations):
        batch = draw_examples(rng, dataset, dash, sched, cfg.batch_size, cfg)
        cond = dot.make_cond(batch.x_ts, batch.x_to, batch.z_ts, batch.t_s, batch.t_o)
        out, tape = dot.forward(cond)
        diff = out - batch.target
        loss = float(np.mean(np.sum(diff**2, axis=1)))
        check_loss(loss, it, losses[:it])
        losses[it] = loss
        grads = dot.backprop(tape, 2.0 * diff / len(diff))
        state.lr = cfg.opt.lr_at(it, cfg.iterations)
        adam_update(state, dot.params, grads)
        dot.touch()
        if log_every and (it + 1) % log_every == 0:
            log.info("dot iter %d loss %.5f", it + 1, np.mean(losses[max(0, it - log_every + 1):it + 1]))
    return dot, losses, validate_dot(dot, dash, dataset, sched, cfg)
