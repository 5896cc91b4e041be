"""Dot estimator that reuses a trained Dash MLP.

The Dot input ``[x_ti, emb(t_i), x_ts?, z_ts?, emb(t_s)?]`` is mapped by a
trainable input projection to the width the Dash network expects.  Each frozen
Dash layer then computes ``h W + b + scale * (h A^T) B^T`` with a trainable
rank-``r`` adapter ``(A, B)``, and a trainable output projection maps the
result to the data dimension.  ``B`` starts at zero, so at initialisation
every adapted layer reproduces its frozen layer exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import InputMask
from .errors import ConfigurationError, ContractError, ShapeError
from .nn import MlpDenoiser, activate, activation_grad, sinusoidal_time_embed


@dataclass
class DotTape:
    cond: np.ndarray
    layer_in: list
    low: list  # h @ A^T per layer
    pre: list
    body_out: np.ndarray
    version: int


class SharedDot:
    def __init__(self, base: MlpDenoiser, mask: InputMask = InputMask(), rank: int = 8,
                 lora_scale: float = 1.0, rng=None, a_std: float = 0.02):
        if base.cond_dim:
            raise ConfigurationError("the shared base must be a plain Dash network")
        if rank < 1 or rank > min(base.hidden or (base.data_dim,)):
            raise ConfigurationError(f"LoRA rank {rank} must lie in [1, {min(base.hidden or (base.data_dim,))}]")
        rng = np.random.default_rng(0) if rng is None else rng
        self.base = base
        self.mask = mask
        self.rank = int(rank)
        self.lora_scale = float(lora_scale)
        self.dim = base.data_dim
        D, E = base.data_dim, base.temb_dim
        self.cond_width = D + E + D * mask.use_x_ts + D * mask.use_z_ts + E * mask.use_t_s
        base_in = base.widths[0]
        # identity on the [x_ti, emb(t_i)] slots: the body starts as Dash(x_ti, t_i)
        w_in = np.zeros((self.cond_width, base_in))
        w_in[:D + E, :D + E] = np.eye(D + E)
        self.in_w, self.in_b = w_in, np.zeros(base_in)
        self.lora_a, self.lora_b = [], []
        for fi, fo in zip(base.widths[:-1], base.widths[1:]):
            self.lora_a.append(rng.normal(0.0, a_std, size=(self.rank, fi)))
            self.lora_b.append(np.zeros((fo, self.rank)))
        # zero output projection: an untrained Dot is the zero predictor
        self.out_w, self.out_b = np.zeros((D, D)), np.zeros(D)
        self.version = 0

    @property
    def params(self) -> list:
        """Trainable parameters only; the shared base is never included."""
        out = [self.in_w, self.in_b]
        for a, b in zip(self.lora_a, self.lora_b):
            out += [a, b]
        return out + [self.out_w, self.out_b]

    def set_params(self, params):
        cur = self.params
        if len(params) != len(cur) or any(np.shape(p) != c.shape for p, c in zip(params, cur)):
            raise ShapeError("parameter list does not match this Dot's architecture")
        params = [np.array(p, dtype=np.float64) for p in params]
        self.in_w, self.in_b = params[0], params[1]
        n = len(self.lora_a)
        self.lora_a = params[2:2 + 2 * n:2]
        self.lora_b = params[3:3 + 2 * n:2]
        self.out_w, self.out_b = params[-2], params[-1]
        self.touch()

    def touch(self):
        self.version += 1

    def n_trainable(self) -> int:
        return sum(p.size for p in self.params)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def unflatten(self, flat) -> list:
        out, pos = [], 0
        for p in self.params:
            out.append(np.asarray(flat[pos:pos + p.size], dtype=np.float64).reshape(p.shape))
            pos += p.size
        if pos != len(flat):
            raise ShapeError(f"flat vector has {len(flat)} entries, expected {pos}")
        return out

    def describe(self) -> dict:
        return {"base": self.base.describe(), "mask": self.mask.as_dict(), "rank": self.rank,
                "lora_scale": self.lora_scale}

    def make_cond(self, x_ts, x_ti, z_ts, t_s, t_i) -> np.ndarray:
        x_ti = np.atleast_2d(np.asarray(x_ti, dtype=np.float64))
        B = x_ti.shape[0]
        base = self.base

        def emb(t):
            e = sinusoidal_time_embed(t, base.temb_dim, base.T)
            return np.broadcast_to(e, (B, base.temb_dim)) if e.ndim == 1 else e

        parts = [x_ti, emb(t_i)]
        if self.mask.use_x_ts:
            parts.append(np.broadcast_to(np.atleast_2d(x_ts), x_ti.shape))
        if self.mask.use_z_ts:
            parts.append(np.broadcast_to(np.atleast_2d(z_ts), x_ti.shape))
        if self.mask.use_t_s:
            parts.append(emb(t_s))
        return np.concatenate(parts, axis=1)

    def adapted_layer(self, i: int, h: np.ndarray):
        """Pre-activation of base layer ``i`` with its adapter; returns ``(pre, h A^T)``."""
        low = h @ self.lora_a[i].T
        pre = h @ self.base.weights[i] + self.base.biases[i] + self.lora_scale * (low @ self.lora_b[i].T)
        return pre, low

    def forward(self, cond: np.ndarray, keep_tape: bool = True):
        if cond.shape[-1] != self.cond_width:
            raise ShapeError(f"conditioning width {cond.shape[-1]} != {self.cond_width}")
        h = cond @ self.in_w + self.in_b
        ins, lows, pres = [], [], []
        last = self.base.n_layers - 1
        for i in range(self.base.n_layers):
            pre, low = self.adapted_layer(i, h)
            ins.append(h)
            lows.append(low)
            pres.append(pre)
            h = pre if i == last else activate(self.base.activation, pre)
        out = h @ self.out_w + self.out_b
        tape = DotTape(cond, ins, lows, pres, h, self.version) if keep_tape else None
        return out, tape

    def backprop(self, tape: DotTape, out_grad: np.ndarray) -> list:
        """Gradients for :attr:`params` (batch-summed)."""
        if tape is None or tape.version != self.version:
            raise ContractError("stale or missing Dot tape")
        g = np.asarray(out_grad, dtype=np.float64)
        g_out_w = tape.body_out.T @ g
        g_out_b = g.sum(axis=0)
        g = g @ self.out_w.T
        n = self.base.n_layers
        g_a, g_b = [None] * n, [None] * n
        s = self.lora_scale
        for i in reversed(range(n)):
            if i != n - 1:
                g = g * activation_grad(self.base.activation, tape.pre[i])
            gb_low = g @ self.lora_b[i]  # gradient w.r.t. h A^T, before scaling
            g_b[i] = s * (g.T @ tape.low[i])
            g_a[i] = s * (gb_low.T @ tape.layer_in[i])
            g = g @ self.base.weights[i].T + s * (gb_low @ self.lora_a[i])
        grads = [tape.cond.T @ g, g.sum(axis=0)]
        for ga, gb in zip(g_a, g_b):
            grads += [ga, gb]
        return grads + [g_out_w, g_out_b]

    def residual(self, x_ts, x_ti, z_ts, t_s, t_i) -> np.ndarray:
        squeeze = np.ndim(x_ti) == 1
        out, _ = self.forward(self.make_cond(x_ts, x_ti, z_ts, t_s, t_i), keep_tape=False)
        return out[0] if squeeze else out


def build_shared_dot(base: MlpDenoiser, mask: InputMask = InputMask(), rank: int = 8,
                     lora_scale: float = 1.0, rng=None) -> SharedDot:
    return SharedDot(base, mask, rank, lora_scale, rng)
