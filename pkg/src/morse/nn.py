"""A small fully-connected denoiser with hand-written reverse-mode gradients
and an Adam optimizer, all in float64 numpy.

Layers compute ``y = x @ W + b`` on row-major batches; the activation is
applied after every layer except the last.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ContractError, ShapeError


class Activation(enum.Enum):
    SILU = "silu"
    RELU = "relu"
    TANH = "tanh"


def activate(kind: Activation, pre: np.ndarray) -> np.ndarray:
    if kind is Activation.SILU:
        return pre * expit(pre)
    if kind is Activation.RELU:
        return np.maximum(pre, 0.0)
    return np.tanh(pre)


def activation_grad(kind: Activation, pre: np.ndarray) -> np.ndarray:
    if kind is Activation.SILU:
        s = expit(pre)
        return s * (1.0 + pre * (1.0 - s))
    if kind is Activation.RELU:
        return (pre > 0).astype(np.float64)
    return 1.0 - np.tanh(pre) ** 2


def sinusoidal_time_embed(t, dim: int, T: int) -> np.ndarray:
    """Interleaved ``[sin(t w_0), cos(t w_0), sin(t w_1), ...]``.

    Frequencies are log-spaced from 1 down to 1/T, so the slowest pair turns
    through one radian over the whole horizon.  A scalar ``t`` gives shape
    ``(dim,)``, an array of ``B`` timesteps gives ``(B, dim)``.
    """
    if dim <= 0 or dim % 2:
        raise ConfigurationError(f"time-embedding dim must be even and positive, got {dim}")
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = float(T) ** (-np.arange(half) / (half - 1))
    ang = np.multiply.outer(np.asarray(t, dtype=np.float64), freqs)
    out = np.empty(ang.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


@dataclass
class Tape:
    """Intermediates of one forward pass, consumed by backprop."""

    inputs: list  # input to each layer
    pre: list  # pre-activation of each layer
    owner: int
    version: int


_ids = itertools.count()


class MlpDenoiser:
    """Feed-forward eps-predictor on ``[x, embed(t)]`` (plus optional conditioning)."""

    def __init__(self, data_dim: int, hidden=(128, 128, 128), temb_dim: int = 32, T: int = 1000,
                 activation=Activation.SILU, cond_dim: int = 0, rng=None, weights=None):
        if data_dim < 1 or any(h < 1 for h in hidden):
            raise ConfigurationError("layer widths must be positive")
        if temb_dim <= 0 or temb_dim % 2:
            raise ConfigurationError("time-embedding dim must be even and positive")
        self.data_dim = self.dim = int(data_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.temb_dim = int(temb_dim)
        self.cond_dim = int(cond_dim)
        self.T = int(T)
        self.activation = Activation(activation)
        self.widths = [self.data_dim + self.temb_dim + self.cond_dim, *self.hidden, self.data_dim]
        self._id = next(_ids)
        self.version = 0
        if weights is None:
            rng = np.random.default_rng(0) if rng is None else rng
            gain = 2.0 if self.activation is Activation.RELU else 1.0
            weights = []
            for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
                weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out)))
                weights.append(np.zeros(fan_out))
        self.set_params(weights)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def weights(self):
        return self.params[0::2]

    @property
    def biases(self):
        return self.params[1::2]

    def set_params(self, params):
        params = [np.array(p, dtype=np.float64) for p in params]
        if len(params) != 2 * self.n_layers:
            raise ShapeError(f"expected {2 * self.n_layers} parameter arrays, got {len(params)}")
        for i, (fi, fo) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            if params[2 * i].shape != (fi, fo) or params[2 * i + 1].shape != (fo,):
                raise ShapeError(f"layer {i}: expected W {(fi, fo)}, b {(fo,)}")
        if not all(np.all(np.isfinite(p)) for p in params):
            raise ConfigurationError("parameters must be finite")
        self.params = params
        self.touch()

    def touch(self):
        """Mark parameters as modified; outstanding tapes become stale."""
        self.version += 1

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def unflatten(self, flat) -> list:
        out, pos = [], 0
        for fi, fo in zip(self.widths[:-1], self.widths[1:]):
            for shape in ((fi, fo), (fo,)):
                size = int(np.prod(shape))
                out.append(np.asarray(flat[pos:pos + size], dtype=np.float64).reshape(shape))
                pos += size
        if pos != len(flat):
            raise ShapeError(f"flat vector has {len(flat)} entries, expected {pos}")
        return out

    def describe(self) -> dict:
        return {"data_dim": self.data_dim, "hidden": list(self.hidden), "temb_dim": self.temb_dim,
                "cond_dim": self.cond_dim, "T": self.T, "activation": self.activation.value}

    def forward(self, inp: np.ndarray, keep_tape: bool = True):
        inp = np.asarray(inp, dtype=np.float64)
        if inp.shape[-1] != self.widths[0]:
            raise ShapeError(f"input width {inp.shape[-1]} != {self.widths[0]}")
        h = inp
        inputs, pres = [], []
        last = self.n_layers - 1
        for i in range(self.n_layers):
            pre = h @ self.params[2 * i] + self.params[2 * i + 1]
            if keep_tape:
                inputs.append(h)
                pres.append(pre)
            h = pre if i == last else activate(self.activation, pre)
        tape = Tape(inputs, pres, self._id, self.version) if keep_tape else None
        return h, tape

    def backprop(self, tape: Tape, out_grad: np.ndarray):
        """Gradients of a loss whose output-gradient is ``out_grad``.

        Returns ``(param_grads, input_grad)`` with ``param_grads`` aligned to
        :attr:`params`.  Gradients are summed over the batch.
        """
        if tape is None or tape.owner != self._id or tape.version != self.version:
            raise ContractError("tape does not belong to the current parameters of this network")
        g = np.asarray(out_grad, dtype=np.float64)
        if g.shape != tape.pre[-1].shape:
            raise ShapeError(f"output grad {g.shape} != output {tape.pre[-1].shape}")
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            if i != self.n_layers - 1:
                g = g * activation_grad(self.activation, tape.pre[i])
            x = tape.inputs[i]
            if x.ndim == 1:
                grads[2 * i] = np.outer(x, g)
                grads[2 * i + 1] = g.copy()
            else:
                grads[2 * i] = x.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g

    def make_input(self, x, t, cond=None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        emb = sinusoidal_time_embed(t, self.temb_dim, self.T)
        if x.ndim == 2 and emb.ndim == 1:
            emb = np.broadcast_to(emb, (x.shape[0], self.temb_dim))
        parts = [x, emb] if cond is None else [x, emb, cond]
        return np.concatenate(parts, axis=-1)

    def estimate(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.data_dim:
            raise ShapeError(f"expected data dim {self.data_dim}, got {x.shape}")
        out, _ = self.forward(self.make_input(x, t), keep_tape=False)
        return out

    def copy(self) -> "MlpDenoiser":
        return MlpDenoiser(self.data_dim, self.hidden, self.temb_dim, self.T, self.activation,
                           self.cond_dim, weights=[p.copy() for p in self.params])


def mlp_forward(net: MlpDenoiser, inp):
    return net.forward(inp)


def mlp_backprop(net: MlpDenoiser, tape: Tape, output_grad):
    return net.backprop(tape, output_grad)[0]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **hyper)


def adam_update(state: AdamState, params, grads):
    """Bias-corrected Adam step applied in place; returns ``params``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError("params, grads and optimizer moments differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {np.shape(g)}, moment {m.shape}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params
