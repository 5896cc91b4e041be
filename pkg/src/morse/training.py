"""Standard eps-prediction training for the MLP Dash denoiser."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule, forward_diffuse
from .errors import ConfigurationError, DivergenceError
from .nn import AdamState, MlpDenoiser, adam_update
from .seeding import rng_for

log = logging.getLogger(__name__)


@dataclass
class OptConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # cosine decay to lr * final_lr_fraction; 1.0 keeps the rate constant
    final_lr_fraction: float = 1.0

    def lr_at(self, it: int, total: int) -> float:
        if self.final_lr_fraction == 1.0 or total <= 1:
            return self.lr
        c = 0.5 * (1.0 + np.cos(np.pi * it / (total - 1)))
        return self.lr * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * c)

    def make_state(self, params) -> AdamState:
        return AdamState.for_params(params, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


def check_loss(loss: float, it: int, history) -> None:
    if not np.isfinite(loss):
        last = next((h for h in reversed(history) if np.isfinite(h)), None)
        raise DivergenceError(f"non-finite loss {loss} at iteration {it} (last finite loss: {last})")


def train_dash(dataset, sched: NoiseSchedule, net: MlpDenoiser, iterations: int,
               batch_size: int = 256, seed: int = 0, opt: OptConfig | None = None,
               log_every: int = 0):
    """Fit ``net`` by minimising ``mean((eps - net(x_t, t))**2)``.

    Each iteration draws a fresh batch of data, noise and ``t ~ U{1..T}``.
    Mutates and returns ``net`` together with the per-iteration losses.
    """
    if iterations < 1 or batch_size < 1:
        raise ConfigurationError("iterations and batch_size must be positive")
    if net.T != sched.T:
        raise ConfigurationError(f"network horizon T={net.T} differs from schedule T={sched.T}")
    opt = opt or OptConfig()
    state = opt.make_state(net.params)
    rng = rng_for(seed, "train")
    losses = np.empty(iterations)
    for it in range(iterations):
        x0 = dataset.sample(rng, batch_size)
        eps = rng.standard_normal(x0.shape)
        t = rng.integers(1, sched.T + 1, size=batch_size)
        x_t = forward_diffuse(x0, t, eps, sched)
        out, tape = net.forward(net.make_input(x_t, t))
        diff = out - eps
        loss = float(np.mean(diff**2))
        check_loss(loss, it, losses[:it])
        losses[it] = loss
        grads, _ = net.backprop(tape, 2.0 * diff / diff.size)
        state.lr = opt.lr_at(it, iterations)
        adam_update(state, net.params, grads)
        net.touch()
        if log_every and (it + 1) % log_every == 0:
            log.info("dash iter %d loss %.5f", it + 1, np.mean(losses[max(0, it - log_every + 1):it + 1]))
    return net, losses
