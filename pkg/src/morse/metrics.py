"""Quality metrics, an exact output-law oracle for DDIM on Gaussian data, and
matched-quality speedup evaluation over latency/quality curves."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .diffusion import NoiseSchedule
from .errors import ContractError, DomainError, EmptyAverageError, RangeError, ShapeError
from .estimators import AnalyticGaussianDash, GaussianDataSpec
from .samplers import TimeGrid


@dataclass(frozen=True, eq=False)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise ShapeError(f"cov {cov.shape} does not match mean of size {mean.size}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12 * max(1.0, np.abs(cov).max()):
            raise DomainError("covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10:
            raise DomainError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def _psd_sqrt(c: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((c + c.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def gaussian_w2(a: GaussianMoments, b: GaussianMoments) -> float:
    """Closed-form 2-Wasserstein distance between two Gaussians."""
    if a.mean.shape != b.mean.shape:
        raise ShapeError("moment dimensions differ")
    rb = _psd_sqrt(b.cov)
    cross = _psd_sqrt(rb @ a.cov @ rb)
    sq = np.sum((a.mean - b.mean) ** 2) + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross)
    return math.sqrt(max(float(sq), 0.0))


def fit_gaussian(samples) -> GaussianMoments:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractError("need at least two samples of shape (n, dim)")
    cov = np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])
    return GaussianMoments(x.mean(axis=0), (cov + cov.T) / 2)


def median_bandwidth(samples, max_points: int = 2000) -> float:
    """Median pairwise distance over (at most) the first ``max_points`` rows."""
    x = np.asarray(samples, dtype=np.float64)[:max_points]
    return float(np.median(pdist(x)))


def _kernel_sum(x, y, bandwidth, block=2048) -> float:
    total = 0.0
    scale = -0.5 / bandwidth**2
    for i in range(0, len(x), block):
        total += float(np.exp(scale * cdist(x[i:i + block], y, "sqeuclidean")).sum())
    return total


def _self_kernel_sum(x, bandwidth, block=2048) -> float:
    """Sum of ``k(x_i, x_j)`` over ordered pairs ``i != j``, visiting each block pair once."""
    total = 0.0
    scale = -0.5 / bandwidth**2
    for i in range(0, len(x), block):
        k = np.exp(scale * cdist(x[i:i + block], x[i:], "sqeuclidean"))
        diag = k[:, :block]
        total += float(diag.sum() - np.trace(diag)) + 2.0 * float(k[:, block:].sum())
    return total


def mmd_rbf(X, Y, bandwidth: float | None = None) -> float:
    """Unbiased U-statistic estimate of squared MMD with an RBF kernel.

    ``bandwidth`` defaults to the median heuristic on ``Y``.  The estimate can
    be slightly negative when the two sample sets share a distribution.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    m, n = len(X), len(Y)
    if m < 2 or n < 2:
        raise ContractError("MMD needs at least two samples per set")
    if bandwidth is None:
        bandwidth = median_bandwidth(Y)
    if not bandwidth > 0:
        raise DomainError("bandwidth must be positive")
    kxx = _self_kernel_sum(X, bandwidth) / (m * (m - 1))
    kyy = _self_kernel_sum(Y, bandwidth) / (n * (n - 1))
    kxy = _kernel_sum(X, Y, bandwidth) / (m * n)
    return kxx + kyy - 2.0 * kxy


def mmd_rbf_to_mixture(X, centers, std: float, bandwidth: float, weights=None) -> float:
    """Squared MMD between the sample ``X`` and an isotropic Gaussian mixture.

    The mixture side enters through its exact kernel mean embedding, so only
    the ``X``-``X`` term is estimated (as a U-statistic): the estimate is
    unbiased and carries no reference-sample noise.
    """
    X = np.asarray(X, dtype=np.float64)
    C = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if X.ndim != 2 or X.shape[1] != C.shape[1]:
        raise ShapeError(f"samples {X.shape} do not match mixture dimension {C.shape[1]}")
    if len(X) < 2:
        raise ContractError("MMD needs at least two samples")
    if not bandwidth > 0 or not std >= 0:
        raise DomainError("bandwidth must be positive and std non-negative")
    w = np.full(len(C), 1.0 / len(C)) if weights is None else np.asarray(weights, dtype=np.float64)
    d = C.shape[1]
    h2, s2 = bandwidth**2, std**2
    # E_y k(x, y) for y ~ N(c, s2 I) is a rescaled Gaussian in ||x - c||
    emb = (h2 / (h2 + s2)) ** (d / 2) * np.exp(-cdist(X, C, "sqeuclidean") / (2 * (h2 + s2))) @ w
    yy = (h2 / (h2 + 2 * s2)) ** (d / 2) * (w @ np.exp(-cdist(C, C, "sqeuclidean") / (2 * (h2 + 2 * s2))) @ w)
    m = len(X)
    return _self_kernel_sum(X, bandwidth) / (m * (m - 1)) - 2.0 * float(emb.mean()) + float(yy)


def mmd_with_stderr(X, Y, bandwidth: float, n_groups: int = 5):
    """MMD^2 of the full sets plus a standard error from disjoint sub-groups of ``X``."""
    value = mmd_rbf(X, Y, bandwidth)
    parts = [mmd_rbf(g, Y, bandwidth) for g in np.array_split(np.asarray(X), n_groups)]
    return value, float(np.std(parts, ddof=1) / math.sqrt(n_groups))


def ddim_affine_step(dash: AnalyticGaussianDash, t: int, t_prev: int):
    """``(M, c)`` such that one DDIM step is ``x -> M x + c`` under the analytic Dash."""
    sched = dash.sched
    a, s = float(sched.alpha[t]), float(sched.sigma[t])
    a_p, s_p = float(sched.alpha[t_prev]), float(sched.sigma[t_prev])
    eye = np.eye(dash.dim)
    if t == t_prev:
        return eye, np.zeros(dash.dim)
    gain = dash.gain(t)
    # x' = (s_p/s) x + (a_p - s_p a / s) x0_hat,   x0_hat = mu + K (x - a mu)
    w = a_p - s_p * a / s
    mu = dash.data.mu
    return (s_p / s) * eye + w * gain, w * (mu - a * gain @ mu)


def exact_ddim_gaussian_oracle(grid: TimeGrid, data: GaussianDataSpec, sched: NoiseSchedule) -> GaussianMoments:
    """Exact law of the DDIM output started from ``x_T ~ N(0, I)``.

    With the posterior-mean Dash every step is affine, so the mean and
    covariance propagate as ``m -> M m + c`` and ``C -> M C M^T``.
    """
    dash = AnalyticGaussianDash(data, sched)
    mean = np.zeros(data.dim)
    cov = np.eye(data.dim)
    for t, t_prev in grid.transitions():
        M, c = ddim_affine_step(dash, t, t_prev)
        mean = M @ mean + c
        cov = M @ cov @ M.T
    return GaussianMoments(mean, (cov + cov.T) / 2)


@dataclass
class QualityCurve:
    """Latency (LSD) -> quality, lower quality values are better."""

    latencies: np.ndarray
    qualities: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.latencies = np.asarray(self.latencies, dtype=np.float64)
        self.qualities = np.asarray(self.qualities, dtype=np.float64)
        if self.latencies.ndim != 1 or self.latencies.shape != self.qualities.shape:
            raise ShapeError("latencies and qualities must be equal-length 1-D arrays")
        if self.latencies.size < 2:
            raise ContractError("a curve needs at least two points")
        if np.any(self.latencies <= 0) or np.any(np.diff(self.latencies) <= 0):
            raise RangeError("latencies must be positive and strictly increasing")

    @classmethod
    def from_points(cls, points, label: str = "") -> "QualityCurve":
        pts = sorted(points)
        return cls([p[0] for p in pts], [p[1] for p in pts], label)

    def envelope(self) -> np.ndarray:
        """Running minimum of quality along increasing latency."""
        return np.minimum.accumulate(self.qualities)


def interpolate(curve: QualityCurve, latency: float) -> float:
    lo, hi = curve.latencies[0], curve.latencies[-1]
    if not lo <= latency <= hi:
        raise RangeError(f"latency {latency} outside [{lo}, {hi}]; curves are not extrapolated")
    return float(np.interp(latency, curve.latencies, curve.qualities))


class NotApplicable:
    """Speedup undefined at this point; ``reason`` is ``"better"`` or ``"worse"``."""

    def __init__(self, reason: str):
        self.reason = reason

    def __repr__(self):
        return f"NotApplicable({self.reason!r})"

    def __eq__(self, other):
        return isinstance(other, NotApplicable) and other.reason == self.reason

    def __hash__(self):
        return hash(self.reason)


NA_BETTER = NotApplicable("better")  # candidate beats every baseline point: no room to accelerate
NA_WORSE = NotApplicable("worse")  # candidate is worse than the baseline's worst point


def matched_latency(baseline: QualityCurve, quality: float):
    """Smallest latency at which the baseline's monotone envelope reaches ``quality``."""
    lat, env = baseline.latencies, baseline.envelope()
    if quality < env[-1]:
        return NA_BETTER
    if quality > env[0]:
        return NA_WORSE
    if quality == env[0]:
        return float(lat[0])
    k = int(np.argmax(env <= quality))  # first knot at or below the target
    q0, q1 = env[k - 1], env[k]
    if q1 == quality or q0 == q1:
        return float(lat[k])
    frac = (q0 - quality) / (q0 - q1)
    return float(lat[k - 1] + frac * (lat[k] - lat[k - 1]))


def speedup_at(baseline: QualityCurve, point):
    """``n / l`` for a candidate ``point = (l, quality)``, where ``n`` is the
    baseline latency reaching the same quality."""
    latency, quality = point
    n = matched_latency(baseline, quality)
    if isinstance(n, NotApplicable):
        return n
    return n / latency


@dataclass
class SpeedupReport:
    average: float
    per_latency: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)


def average_speedup(baseline: QualityCurve, candidate: QualityCurve, latencies) -> SpeedupReport:
    """Mean matched-quality speedup over ``latencies``; N/A points are excluded."""
    per, used, excluded = {}, [], []
    for l in latencies:
        s = speedup_at(baseline, (l, interpolate(candidate, l)))
        per[float(l)] = s
        if isinstance(s, NotApplicable):
            excluded.append(float(l))
        else:
            used.append(s)
    if not used:
        raise EmptyAverageError("every latency was excluded (N/A); no speedup to average")
    return SpeedupReport(float(np.mean(used)), per, excluded)
