"""Experiment configuration: a YAML file validated in full before any compute.

Unknown keys are rejected, and every error names the offending key path and
its line in the file.  All sections except ``dataset`` are optional; see
``configs/gmm.yaml`` for a fully spelled-out example.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..datasets import make_dataset
from ..diffusion import make_linear_schedule
from ..engine import ChainSource, InputMask
from ..errors import ConfigurationError
from ..nn import Activation
from ..samplers import SamplerKind


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    params: dict

    def build(self):
        return make_dataset(self.kind, **self.params)


@dataclass(frozen=True)
class ScheduleSpec:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def build(self):
        return make_linear_schedule(self.T, self.beta_start, self.beta_end)


@dataclass(frozen=True)
class ModelSpec:
    hidden: tuple = (128, 128, 128)
    temb_dim: int = 32
    activation: Activation = Activation.SILU


@dataclass(frozen=True)
class TrainSpec:
    iterations: int = 4000
    batch_size: int = 256
    lr: float = 1e-3
    final_lr_fraction: float = 1.0


@dataclass(frozen=True)
class DotSpec:
    rank: int = 8
    lora_scale: float = 1.0
    mask: InputMask = InputMask()
    chain_source: ChainSource = ChainSource.FROM_DASH


@dataclass(frozen=True)
class DotTrainSpec(TrainSpec):
    max_gap: int | None = None
    sampler: SamplerKind = SamplerKind.DDIM
    rollout_hops: int = 1
    validation_size: int = 4096


@dataclass(frozen=True)
class SampleSpec:
    n_steps: int = 20
    dash_steps: int | None = None  # None: every step is a Dash step
    chains: int = 1000


@dataclass(frozen=True)
class BenchSpec:
    grid_sizes: tuple = tuple(range(2, 21)) + (24, 28, 32, 40, 50)
    budgets: tuple = (4, 6, 8, 10, 12)
    exchanged_ratio: float = 0.5
    sweep_ratios: tuple = (0.25, 0.5, 0.75)
    latencies: tuple = (4, 6, 8, 10, 12)
    speed_ratio: float = 4.0
    chains: int = 20_000
    block_size: int = 2000


@dataclass(frozen=True)
class MetricSpec:
    kind: str = "auto"  # auto: w2 for Gaussian data, mmd otherwise
    bandwidth: float | None = None  # None: median heuristic on the reference sample
    reference_size: int = 2000
    target: str = "exact"  # exact: closed-form mixture embedding; sample: reference draws
    stderr_groups: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    seed: int = 0
    schedule: ScheduleSpec = ScheduleSpec()
    sampler: SamplerKind = SamplerKind.DDIM
    model: ModelSpec = ModelSpec()
    dash_training: TrainSpec = TrainSpec()
    dot: DotSpec = DotSpec()
    dot_training: DotTrainSpec = DotTrainSpec()
    sample: SampleSpec = SampleSpec()
    bench: BenchSpec = BenchSpec()
    metric: MetricSpec = MetricSpec()
    output_dir: str = "runs"
    source: str = field(default="<memory>", compare=False)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        from dataclasses import replace

        return replace(self, seed=_nonneg_int(seed, "seed"))


# -- scalar parsers ---------------------------------------------------------

class _Bad(Exception):
    pass


def _int(v, _=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise _Bad(f"expected an integer, got {v!r}")
    return v


def _pos_int(v, _=None):
    v = _int(v)
    if v < 1:
        raise _Bad(f"must be >= 1, got {v}")
    return v


def _nonneg_int(v, name="value"):
    try:
        v = _int(v)
    except _Bad as e:
        raise ConfigurationError(f"{name}: {e}") from None
    if v < 0 or v >= 2**64:
        raise ConfigurationError(f"{name}: must be an unsigned 64-bit integer, got {v}")
    return v


def _real(v, _=None):
    # YAML 1.1 reads "1e-4" as a string, so numeric strings are accepted
    if isinstance(v, bool):
        raise _Bad(f"expected a number, got {v!r}")
    if isinstance(v, str):
        try:
            v = float(v)
        except ValueError:
            raise _Bad(f"expected a number, got {v!r}") from None
    if not isinstance(v, (int, float)) or v != v or v in (float("inf"), float("-inf")):
        raise _Bad(f"expected a finite number, got {v!r}")
    return float(v)


def _pos_real(v, _=None):
    v = _real(v)
    if v <= 0:
        raise _Bad(f"must be > 0, got {v}")
    return v


def _fraction(v, _=None):
    v = _real(v)
    if not 0 < v <= 1:
        raise _Bad(f"must lie in (0, 1], got {v}")
    return v


def _bool(v, _=None):
    if not isinstance(v, bool):
        raise _Bad(f"expected true or false, got {v!r}")
    return v


def _optional(parse):
    def p(v, _=None):
        return None if v is None else parse(v)
    return p


def _choice(options: dict):
    def p(v, _=None):
        if v not in options:
            raise _Bad(f"expected one of {sorted(options)}, got {v!r}")
        return options[v]
    return p


def _int_list(v, _=None):
    if not isinstance(v, list) or not v:
        raise _Bad("expected a non-empty list of integers")
    return tuple(_pos_int(x) for x in v)


def _real_list(v, _=None):
    if not isinstance(v, list) or not v:
        raise _Bad("expected a non-empty list of numbers")
    return tuple(_real(x) for x in v)


def _bandwidth(v, _=None):
    return None if v in (None, "median") else _pos_real(v)


# -- line tracking ----------------------------------------------------------

def _line_index(node, path=(), out=None):
    """Map key paths to 1-based line numbers using the YAML node tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = path + (str(k.value),)
            out[p] = k.start_mark.line + 1
            _line_index(v, p, out)
    return out


class _Reader:
    def __init__(self, data: dict, lines: dict, source: str):
        self.data, self.lines, self.source = data, lines, source

    def where(self, path) -> str:
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        line = self.lines.get(path)
        return f"{self.source}:{line}" if line else self.source

    def fail(self, path, msg):
        name = ".".join(path) if path else "<top level>"
        raise ConfigurationError(f"{self.where(path)}: {name}: {msg}")

    def section(self, path, spec: dict, required=()):
        raw = self.data
        for p in path:
            raw = raw.get(p, {}) if isinstance(raw, dict) else raw
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            self.fail(path, "expected a mapping")
        for k in raw:
            if k not in spec:
                self.fail(tuple(path) + (str(k),), f"unknown key (allowed: {', '.join(sorted(spec))})")
        for k in required:
            if k not in raw:
                self.fail(tuple(path) + (k,), "missing required key")
        out = {}
        for k, parse in spec.items():
            if k in raw:
                try:
                    out[k] = parse(raw[k])
                except _Bad as e:
                    self.fail(tuple(path) + (k,), str(e))
        return out


_SAMPLERS = {"ddim": SamplerKind.DDIM, "ddpm": SamplerKind.DDPM}
_CHAINS = {"dash": ChainSource.FROM_DASH, "previous": ChainSource.FROM_PREVIOUS}
_ACTIVATIONS = {a.value: a for a in Activation}
_TRAIN_KEYS = {"iterations": _pos_int, "batch_size": _pos_int, "lr": _pos_real, "final_lr_fraction": _fraction}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigurationError(f"{where}: invalid YAML: {getattr(e, 'problem', e)}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source}: top level must be a mapping")
    r = _Reader(data, _line_index(node), source)

    top = r.section((), {
        "seed": _int, "dataset": lambda v: v, "schedule": lambda v: v, "sampler": _choice(_SAMPLERS),
        "model": lambda v: v, "dash_training": lambda v: v, "dot": lambda v: v, "dot_training": lambda v: v,
        "sample": lambda v: v, "bench": lambda v: v, "metric": lambda v: v, "output_dir": str,
    }, required=("dataset",))
    if "seed" in top and not 0 <= top["seed"] < 2**64:
        r.fail(("seed",), "must be an unsigned 64-bit integer")

    ds = data["dataset"]
    if not isinstance(ds, dict) or "kind" not in ds:
        r.fail(("dataset", "kind"), "missing required key")
    params = {k: v for k, v in ds.items() if k != "kind"}
    dataset = DatasetSpec(str(ds["kind"]), params)
    try:
        dataset.build()
    except (ConfigurationError, TypeError, ValueError, KeyError) as e:
        r.fail(("dataset",), f"cannot build data set: {e}")

    sched = ScheduleSpec(**r.section(("schedule",), {"T": _pos_int, "beta_start": _pos_real,
                                                     "beta_end": _pos_real}))
    try:
        sched.build()
    except ConfigurationError as e:
        r.fail(("schedule",), str(e))

    model = r.section(("model",), {"hidden": _int_list, "temb_dim": _pos_int,
                                   "activation": _choice(_ACTIVATIONS)})
    if model.get("temb_dim", 2) % 2:
        r.fail(("model", "temb_dim"), "must be even")
    model = ModelSpec(**model)

    dash_training = TrainSpec(**r.section(("dash_training",), _TRAIN_KEYS))

    dot = r.section(("dot",), {"rank": _pos_int, "lora_scale": _real, "mask": lambda v: v,
                               "chain_source": _choice(_CHAINS)})
    if "mask" in dot:
        dot["mask"] = InputMask(**r.section(("dot", "mask"), {"use_x_ts": _bool, "use_z_ts": _bool,
                                                              "use_t_s": _bool}))
    if dot.get("rank", 1) > min(model.hidden):
        r.fail(("dot", "rank"), f"must not exceed the smallest hidden width {min(model.hidden)}")
    dot = DotSpec(**dot)

    dot_training = DotTrainSpec(**r.section(("dot_training",), {
        **_TRAIN_KEYS, "max_gap": _optional(_pos_int), "sampler": _choice(_SAMPLERS),
        "rollout_hops": _pos_int, "validation_size": _pos_int}))

    sample = r.section(("sample",), {"n_steps": _pos_int, "dash_steps": _optional(_pos_int),
                                     "chains": _pos_int})
    sample = SampleSpec(**sample)
    if sample.n_steps > sched.T:
        r.fail(("sample", "n_steps"), f"must not exceed T={sched.T}")
    if sample.dash_steps is not None and sample.dash_steps > sample.n_steps:
        r.fail(("sample", "dash_steps"), "must not exceed n_steps")

    bench = BenchSpec(**r.section(("bench",), {
        "grid_sizes": _int_list, "budgets": _int_list, "exchanged_ratio": _real, "sweep_ratios": _real_list,
        "latencies": _real_list, "speed_ratio": _pos_real, "chains": _pos_int, "block_size": _pos_int}))
    if bench.speed_ratio <= 1:
        r.fail(("bench", "speed_ratio"), "must exceed 1")
    for key in ("exchanged_ratio", "sweep_ratios"):
        vals = getattr(bench, key)
        for v in (vals if isinstance(vals, tuple) else (vals,)):
            if not 0 <= v < 1:
                r.fail(("bench", key), f"ratios must lie in [0, 1), got {v}")
    if len(set(bench.grid_sizes)) != len(bench.grid_sizes) or len(bench.grid_sizes) < 2:
        r.fail(("bench", "grid_sizes"), "need at least two distinct grid sizes")
    if max(bench.grid_sizes) > sched.T:
        r.fail(("bench", "grid_sizes"), f"must not exceed T={sched.T}")
    for b in bench.budgets:
        n = b - round(bench.exchanged_ratio * b) + round(bench.speed_ratio * round(bench.exchanged_ratio * b))
        if n > sched.T:
            r.fail(("bench", "budgets"), f"budget {b} needs {n} steps, more than T={sched.T}")
    if any(l <= 0 for l in bench.latencies):
        r.fail(("bench", "latencies"), "latencies must be positive")

    metric = r.section(("metric",), {"kind": _choice({"auto": "auto", "mmd": "mmd", "w2": "w2"}),
                                     "bandwidth": _bandwidth, "reference_size": _pos_int,
                                     "target": _choice({"exact": "exact", "sample": "sample"}),
                                     "stderr_groups": _pos_int})
    metric = MetricSpec(**metric)
    if metric.stderr_groups < 2:
        r.fail(("metric", "stderr_groups"), "need at least 2 groups")
    if metric.reference_size < 2:
        r.fail(("metric", "reference_size"), "need at least 2 reference samples")

    return ExperimentConfig(dataset=dataset, seed=top.get("seed", 0), schedule=sched,
                            sampler=top.get("sampler", SamplerKind.DDIM), model=model,
                            dash_training=dash_training, dot=dot, dot_training=dot_training, sample=sample,
                            bench=bench, metric=metric, output_dir=top.get("output_dir", "runs"),
                            source=source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"{path}: cannot read config: {e.strerror}") from None
    return parse_config(text, str(path))
