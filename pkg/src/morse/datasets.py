"""Toy data sets: two Gaussians with exact oracles and a ring mixture."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .estimators import GaussianDataSpec


class GaussianDataset:
    def __init__(self, mu, cov):
        self.spec = GaussianDataSpec(mu, cov)
        self.dim = self.spec.dim

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.spec.sample(rng, n)

    def describe(self) -> dict:
        return {"kind": "gaussian", "mu": self.spec.mu.tolist(), "cov": self.spec.cov.tolist()}


class RingMixture:
    """Equal-weight isotropic Gaussians centred on a circle."""

    def __init__(self, n_modes: int = 8, radius: float = 4.0, std: float = 0.3):
        if n_modes < 1 or radius < 0 or std <= 0:
            raise ConfigurationError("ring mixture needs n_modes >= 1, radius >= 0, std > 0")
        self.n_modes, self.radius, self.std = int(n_modes), float(radius), float(std)
        ang = 2 * np.pi * np.arange(self.n_modes) / self.n_modes
        self.centers = self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        self.dim = 2
        self.spec = None

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.integers(0, self.n_modes, size=n)
        return self.centers[idx] + self.std * rng.standard_normal((n, 2))

    def describe(self) -> dict:
        return {"kind": "gmm", "n_modes": self.n_modes, "radius": self.radius, "std": self.std}


def isotropic_gaussian(dim: int = 2) -> GaussianDataset:
    if int(dim) < 1:
        raise ConfigurationError(f"dim must be >= 1, got {dim}")
    return GaussianDataset(np.zeros(dim), np.eye(dim))


def anisotropic_gaussian() -> GaussianDataset:
    return GaussianDataset([1.0, -1.0], np.diag([0.5, 2.0]))


# allowed and required parameters per data set kind
_PARAMS = {
    "isotropic": ({"dim"}, set()),
    "anisotropic": (set(), set()),
    "gaussian": ({"mu", "cov"}, {"mu", "cov"}),
    "gmm": ({"n_modes", "radius", "std"}, set()),
}


def make_dataset(kind: str, **params):
    if kind not in _PARAMS:
        raise ConfigurationError(f"unknown data set kind {kind!r} (known: {', '.join(_PARAMS)})")
    allowed, required = _PARAMS[kind]
    if set(params) - allowed:
        raise ConfigurationError(f"unknown {kind} parameter(s) {sorted(set(params) - allowed)} "
                                 f"(allowed: {sorted(allowed)})")
    if required - set(params):
        raise ConfigurationError(f"{kind} data set needs {sorted(required - set(params))}")
    if kind == "isotropic":
        return isotropic_gaussian(**params)
    if kind == "anisotropic":
        return anisotropic_gaussian()
    if kind == "gaussian":
        return GaussianDataset(params["mu"], params["cov"])
    return RingMixture(**params)
