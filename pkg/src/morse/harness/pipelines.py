"""The four experiment pipelines behind the command line: train-dash,
train-dot, sample and bench.

Every output file is written with locale-independent formatting (``repr`` of
floats, sorted JSON keys), so two runs with the same config and seed produce
byte-identical artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..datasets import GaussianDataset, RingMixture
from ..dot_training import DotTrainConfig, train_dot
from ..engine import (ChainSource, OracleDot, all_dash_schedule, build_morse_schedule, lsd_cost, morse_sample,
                      schedule_for_budget)
from ..errors import ConfigurationError, IntegrityError
from ..metrics import (GaussianMoments, NotApplicable, QualityCurve, average_speedup, fit_gaussian, gaussian_w2,
                       interpolate, median_bandwidth, mmd_rbf, mmd_rbf_to_mixture, speedup_at)
from ..nn import Activation, MlpDenoiser
from ..samplers import select_time_grid
from ..seeding import rng_for
from ..shared_dot import SharedDot
from ..training import OptConfig, train_dash
from . import checkpoint as ckpt_io
from .config import ExperimentConfig

log = logging.getLogger(__name__)

CURVE_COLUMNS = ["label", "latency_lsd", "n_steps", "dash_steps", "dot_steps", "metric", "metric_stderr"]
SPEEDUP_COLUMNS = ["latency_lsd", "speedup_or_NA"]
SWEEP_COLUMNS = ["ratio", "latency_lsd", "metric"]
LOSS_COLUMNS = ["iteration", "loss"]


# -- file helpers -----------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, NotApplicable):
        return f"NA_{v.reason}"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- model <-> checkpoint ---------------------------------------------------

def build_dash(cfg: ExperimentConfig, dim: int, rng=None) -> MlpDenoiser:
    m = cfg.model
    return MlpDenoiser(dim, hidden=m.hidden, temb_dim=m.temb_dim, T=cfg.schedule.T, activation=m.activation,
                       rng=rng)


def dash_checkpoint(net: MlpDenoiser, seed: int, iterations: int, fingerprint: str) -> ckpt_io.Checkpoint:
    return ckpt_io.Checkpoint("dash-mlp", net.describe(), net.flat_params(), seed, iterations, fingerprint)


def dash_from_checkpoint(ck: ckpt_io.Checkpoint) -> MlpDenoiser:
    a = ck.arch
    shell = MlpDenoiser(a["data_dim"], hidden=tuple(a["hidden"]), temb_dim=a["temb_dim"], T=a["T"],
                        activation=Activation(a["activation"]), cond_dim=a["cond_dim"])
    shell.set_params(shell.unflatten(ck.params))
    return shell


def params_digest(flat: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(flat, dtype="<f8").tobytes()).hexdigest()


def dot_checkpoint(dot: SharedDot, seed: int, iterations: int, fingerprint: str) -> ckpt_io.Checkpoint:
    return ckpt_io.Checkpoint("shared-dot", dot.describe(), dot.flat_params(), seed, iterations, fingerprint,
                              {"dash_params_sha256": params_digest(dot.base.flat_params())})


def dot_from_checkpoint(ck: ckpt_io.Checkpoint, dash: MlpDenoiser) -> SharedDot:
    from ..engine import InputMask

    digest = params_digest(dash.flat_params())
    if (ck.extra or {}).get("dash_params_sha256") != digest:
        raise IntegrityError("this Dot was trained on a different Dash model "
                             f"(Dot records {(ck.extra or {}).get('dash_params_sha256')}, Dash is {digest})")
    if ck.arch["base"] != dash.describe():
        raise IntegrityError("Dot architecture does not match the Dash network")
    dot = SharedDot(dash, InputMask(**ck.arch["mask"]), rank=ck.arch["rank"], lora_scale=ck.arch["lora_scale"])
    dot.set_params(dot.unflatten(ck.params))
    return dot


def load_dash(path, cfg: ExperimentConfig) -> MlpDenoiser:
    fp = cfg.schedule.build().fingerprint()
    return dash_from_checkpoint(ckpt_io.load(path, "dash-mlp", fp))


def load_dot(path, cfg: ExperimentConfig, dash: MlpDenoiser) -> SharedDot:
    fp = cfg.schedule.build().fingerprint()
    return dot_from_checkpoint(ckpt_io.load(path, "shared-dot", fp), dash)


def _opt(spec) -> OptConfig:
    return OptConfig(lr=spec.lr, final_lr_fraction=spec.final_lr_fraction)


# -- training pipelines -----------------------------------------------------

def run_train_dash(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    data = cfg.dataset.build()
    sched = cfg.schedule.build()
    t = cfg.dash_training
    net = build_dash(cfg, data.dim, rng_for(cfg.seed, "init"))
    net, losses = train_dash(data, sched, net, t.iterations, t.batch_size, cfg.seed, _opt(t),
                             log_every=max(1, t.iterations // 10))
    ckpt_io.save(out / "dash.ckpt", dash_checkpoint(net, cfg.seed, t.iterations, sched.fingerprint()))
    write_csv(out / "dash_loss.csv", LOSS_COLUMNS, ((i + 1, float(l)) for i, l in enumerate(losses)))
    return {"checkpoint": str(out / "dash.ckpt"), "final_loss": float(losses[-1])}


def dot_train_config(cfg: ExperimentConfig) -> DotTrainConfig:
    t = cfg.dot_training
    return DotTrainConfig(iterations=t.iterations, batch_size=t.batch_size, seed=cfg.seed, max_gap=t.max_gap,
                          sampler=t.sampler, rollout_hops=t.rollout_hops, validation_size=t.validation_size,
                          opt=_opt(t))


def run_train_dot(cfg: ExperimentConfig, out: Path, dash_ckpt: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    data = cfg.dataset.build()
    sched = cfg.schedule.build()
    dash = load_dash(dash_ckpt, cfg)
    d = cfg.dot
    dot = SharedDot(dash, d.mask, rank=d.rank, lora_scale=d.lora_scale, rng=rng_for(cfg.seed, "init", 1))
    t = cfg.dot_training
    dot, losses, report = train_dot(dash, dot, data, sched, dot_train_config(cfg), log_every=max(1, t.iterations // 10))
    ckpt_io.save(out / "dot.ckpt", dot_checkpoint(dot, cfg.seed, t.iterations, sched.fingerprint()))
    write_csv(out / "dot_loss.csv", LOSS_COLUMNS, ((i + 1, float(l)) for i, l in enumerate(losses)))
    summary = report.as_dict()
    summary["trainable_params"] = dot.n_trainable()
    summary["base_params"] = dash.n_params()
    write_json(out / "dot_validation.json", summary)
    return summary


# -- chain evaluation -------------------------------------------------------

def resolve_threads(flag: int | None, env: dict) -> int:
    raw = flag if flag is not None else env.get("MORSE_THREADS")
    if raw in (None, ""):
        return 1
    try:
        k = int(raw)
    except ValueError:
        raise ConfigurationError(f"MORSE_THREADS must be a positive integer, got {raw!r}") from None
    if k < 1:
        raise ConfigurationError(f"thread count must be >= 1, got {k}")
    return k


def run_chains(fn, n_chains: int, block: int, seed: int, threads: int = 1) -> np.ndarray:
    """Evaluate ``fn(rng, size)`` over fixed-size chain blocks and stack them.

    Block ``b`` always uses the stream ``rng_for(seed, "chains", b)`` and the
    blocks are concatenated in index order, so the result does not depend on
    ``threads``.
    """
    sizes = [min(block, n_chains - s) for s in range(0, n_chains, block)]

    def work(b):
        return fn(rng_for(seed, "chains", b), sizes[b])

    if threads <= 1 or len(sizes) == 1:
        parts = [work(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, range(len(sizes))))
    return np.concatenate(parts, axis=0)


class QualityMetric:
    """Lower-is-better sample quality with a standard error from disjoint chain groups."""

    def __init__(self, cfg: ExperimentConfig, data):
        m = cfg.metric
        kind = m.kind
        if kind == "auto":
            kind = "w2" if isinstance(data, GaussianDataset) else "mmd"
        self.kind, self.groups = kind, m.stderr_groups
        self.bandwidth = None
        if kind == "w2":
            if not isinstance(data, GaussianDataset):
                raise ConfigurationError("metric w2 needs Gaussian data")
            self.target = GaussianMoments(data.spec.mu, data.spec.cov)
            return
        self.reference = data.sample(rng_for(cfg.seed, "dataset"), m.reference_size)
        self.bandwidth = m.bandwidth if m.bandwidth is not None else median_bandwidth(self.reference)
        self.exact = m.target == "exact"
        if self.exact and not isinstance(data, RingMixture):
            raise ConfigurationError("metric target 'exact' is only available for the gmm data set")
        self.data = data

    def value(self, x) -> float:
        if self.kind == "w2":
            return gaussian_w2(fit_gaussian(x), self.target)
        if self.exact:
            return mmd_rbf_to_mixture(x, self.data.centers, self.data.std, self.bandwidth)
        return mmd_rbf(x, self.reference, self.bandwidth)

    def __call__(self, x):
        parts = [self.value(g) for g in np.array_split(x, self.groups)]
        return self.value(x), float(np.std(parts, ddof=1) / math.sqrt(self.groups))

    def describe(self) -> dict:
        out = {"kind": self.kind, "stderr_groups": self.groups}
        if self.kind == "mmd":
            out.update(bandwidth=self.bandwidth, target="exact" if self.exact else "sample",
                       reference_size=len(self.reference))
        return out


# -- sample -----------------------------------------------------------------

def run_sample(cfg: ExperimentConfig, out: Path, dash_ckpt: Path, dot_ckpt: Path | None,
               chain: ChainSource | None = None, threads: int = 1) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    sched = cfg.schedule.build()
    dash = load_dash(dash_ckpt, cfg)
    s = cfg.sample
    grid = select_time_grid(sched.T, s.n_steps)
    d = s.dash_steps or s.n_steps
    chain = chain or cfg.dot.chain_source
    if d == s.n_steps:
        schedule, dot = all_dash_schedule(grid, cfg.bench.speed_ratio), None
    else:
        if dot_ckpt is None:
            raise ConfigurationError("sample.dash_steps < sample.n_steps needs a Dot checkpoint (--dot-ckpt)")
        schedule, dot = build_morse_schedule(grid, d, cfg.bench.speed_ratio), load_dot(dot_ckpt, cfg, dash)

    def fn(rng, size):
        return morse_sample(dash, dot, schedule, sched, cfg.sampler, chain, rng, size, record=False)[0]

    x = run_chains(fn, s.chains, cfg.bench.block_size, cfg.seed, threads)
    write_csv(out / "samples.csv", [f"x{i}" for i in range(x.shape[1])], (map(float, row) for row in x))
    return {"samples": str(out / "samples.csv"), "lsd": lsd_cost(schedule),
            "dash_steps": schedule.dash_count, "dot_steps": schedule.dot_count}


# -- bench ------------------------------------------------------------------

@dataclass
class BenchResult:
    curves: list
    speedups: list
    sweep: list
    summary: dict


def exchanged_steps(budget: int, ratio: float) -> int:
    return min(int(math.floor(ratio * budget + 0.5)), budget - 1)


def run_bench(cfg: ExperimentConfig, out: Path, dash_ckpt: Path, dot_ckpt: Path | None, oracle_dot: bool = False,
              chain: ChainSource | None = None, threads: int = 1) -> BenchResult:
    out.mkdir(parents=True, exist_ok=True)
    data = cfg.dataset.build()
    sched = cfg.schedule.build()
    dash = load_dash(dash_ckpt, cfg)
    if oracle_dot:
        dot, label = OracleDot(dash), "morse-oracle"
    elif dot_ckpt is None:
        raise ConfigurationError("bench needs a Dot checkpoint (--dot-ckpt) or --oracle-dot")
    else:
        dot, label = load_dot(dot_ckpt, cfg, dash), "morse"
    chain = chain or cfg.dot.chain_source
    b = cfg.bench
    metric = QualityMetric(cfg, data)

    def evaluate(schedule):
        def fn(rng, size):
            return morse_sample(dash, dot, schedule, sched, cfg.sampler, chain, rng, size, record=False)[0]
        return metric(run_chains(fn, b.chains, b.block_size, cfg.seed, threads))

    curves = []
    for n in sorted(b.grid_sizes):
        q, se = evaluate(all_dash_schedule(select_time_grid(sched.T, n), b.speed_ratio))
        curves.append(("baseline", float(n), n, n, 0, q, se))
        log.info("baseline n=%d metric %.6g +- %.2g", n, q, se)

    ratios = sorted(set(b.sweep_ratios) | {b.exchanged_ratio})
    sweep, main = [], []
    for ratio in ratios:
        for L in sorted(b.budgets):
            s = schedule_for_budget(sched.T, L, exchanged_steps(L, ratio), b.speed_ratio)
            q, se = evaluate(s)
            lsd = lsd_cost(s)
            sweep.append((ratio, lsd, q))
            if ratio == b.exchanged_ratio:
                main.append((label, lsd, s.grid.n_steps, s.dash_count, s.dot_count, q, se))
            log.info("%s ratio %.3g L=%d (%d Dash + %d Dot) metric %.6g +- %.2g", label, ratio, L,
                     s.dash_count, s.dot_count, q, se)
    curves += main

    baseline = QualityCurve.from_points([(r[1], r[5]) for r in curves if r[0] == "baseline"], "baseline")
    cand = QualityCurve.from_points([(r[1], r[5]) for r in main], label)
    stderr = {r[1]: r[6] for r in main}
    speedups, per, lenient = [], {}, {}
    for l in b.latencies:
        q = interpolate(cand, l)
        s = speedup_at(baseline, (l, q))
        se = float(np.interp(l, cand.latencies, [stderr[x] for x in cand.latencies]))
        # the same point with its metric moved one standard error in its favour
        lenient[float(l)] = speedup_at(baseline, (l, q - se))
        per[float(l)] = s
        speedups.append((float(l), s))
    report = average_speedup(baseline, cand, b.latencies)
    summary = {
        "label": label, "chain_source": chain.value, "sampler": cfg.sampler.value, "seed": cfg.seed,
        "chains": b.chains, "speed_ratio": b.speed_ratio, "exchanged_ratio": b.exchanged_ratio,
        "metric": metric.describe(), "baseline_envelope_applied": bool(np.any(baseline.envelope() != baseline.qualities)),
        "average_speedup": report.average, "excluded_latencies": report.excluded,
        "per_latency": {_fmt(k): _fmt(v) for k, v in per.items()},
        "per_latency_within_stderr": {_fmt(k): _fmt(v) for k, v in lenient.items()},
    }
    write_csv(out / "curves.csv", CURVE_COLUMNS, curves)
    write_csv(out / "speedup.csv", SPEEDUP_COLUMNS, speedups)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, sweep)
    write_json(out / "bench_summary.json", summary)
    return BenchResult(curves, speedups, sweep, summary)
