import csv
import json
import re
import time
from pathlib import Path

import numpy as np
import pytest

from morse.diffusion import make_linear_schedule
from morse.engine import ChainSource, InputMask
from morse.errors import ConfigurationError, IntegrityError
from morse.harness import checkpoint as ckpt_io
from morse.harness.cli import main
from morse.harness.config import load_config, parse_config
from morse.harness.pipelines import (CURVE_COLUMNS, SPEEDUP_COLUMNS, SWEEP_COLUMNS, dash_checkpoint,
                                     dash_from_checkpoint, dot_checkpoint, dot_from_checkpoint, file_sha256,
                                     resolve_threads, run_chains)
from morse.nn import MlpDenoiser
from morse.samplers import SamplerKind
from morse.shared_dot import SharedDot

ROOT = Path(__file__).resolve().parents[1]

TINY = (ROOT / "tests" / "tiny.yaml").read_text()


# -- config -----------------------------------------------------------------

def test_shipped_configs_parse():
    cfg = load_config(ROOT / "configs" / "gmm.yaml")
    assert cfg.dataset.kind == "gmm" and cfg.bench.chains == 20_000
    assert cfg.schedule.beta_start == 1e-4 and cfg.dot.mask == InputMask.full()
    assert cfg.dot_training.max_gap is None and cfg.bench.speed_ratio == 4.0
    smoke = load_config(ROOT / "configs" / "gaussian_smoke.yaml")
    assert smoke.dash_training.iterations == 500


def test_defaults_and_overrides():
    cfg = parse_config("dataset: {kind: isotropic}\nsampler: ddpm\ndot: {chain_source: previous}\n")
    assert cfg.sampler is SamplerKind.DDPM and cfg.dot.chain_source is ChainSource.FROM_PREVIOUS
    assert cfg.model.hidden == (128, 128, 128) and cfg.seed == 0
    assert cfg.with_seed(9).seed == 9
    assert parse_config("dataset: {kind: gmm}\nschedule: {beta_start: 1e-4}\n").schedule.beta_start == 1e-4


def test_missing_dataset_names_key():
    with pytest.raises(ConfigurationError, match="dataset"):
        parse_config("seed: 1\n")


@pytest.mark.parametrize("text,line,needle", [
    ("dataset: {kind: gmm}\nbench:\n  chains: 10\n  chanes: 3\n", 4, "bench.chanes: unknown key"),
    ("dataset: {kind: gmm}\ndash_training:\n  iterations: -5\n", 3, "dash_training.iterations"),
    ("dataset: {kind: gmm}\nmodel:\n  temb_dim: 7\n", 3, "must be even"),
    ("dataset: {kind: gmm}\nsampler: euler\n", 2, "sampler"),
    ("dataset:\n  kind: gmm\n  radius: -1\n", 1, "cannot build"),
    ("dataset: {kind: gmm}\nschedule:\n  beta_start: 0.5\n  beta_end: 0.1\n", 2, "schedule"),
    ("dataset: {kind: gmm}\nmetric:\n  bandwidth: wide\n", 3, "metric.bandwidth"),
    ("dataset: {kind: gmm}\ndot:\n  mask: {use_x_ts: yes please}\n", 3, "use_x_ts"),
    ("dataset: {kind: gmm}\nbench:\n  exchanged_ratio: 1.0\n", 3, "ratios"),
    ("dataset: {kind: gmm}\n  bad: [\n", 2, "invalid YAML"),
])
def test_errors_are_line_precise(text, line, needle):
    with pytest.raises(ConfigurationError) as e:
        parse_config(text, "exp.yaml")
    assert f"exp.yaml:{line}:" in str(e.value)
    assert needle in str(e.value)


@pytest.mark.parametrize("dataset,needle", [
    ("{kind: gaussian}", "needs ['cov', 'mu']"),
    ("{kind: gaussian, mu: [0, 0], cov: [[1, 0], [0, 1]], spread: 2}", "unknown gaussian parameter"),
    ("{kind: isotropic, dim: 0}", "dim must be >= 1"),
    ("{kind: swissroll}", "unknown data set kind"),
])
def test_dataset_parameters_validated(dataset, needle):
    with pytest.raises(ConfigurationError, match=re.escape(needle)):
        parse_config(f"dataset: {dataset}\n")


# -- checkpoint container ---------------------------------------------------

def dash_ckpt():
    net = MlpDenoiser(2, hidden=(8, 8), temb_dim=4, rng=np.random.default_rng(0))
    return net, dash_checkpoint(net, 7, 123, make_linear_schedule().fingerprint())


def test_roundtrip_is_bit_exact(tmp_path):
    net, ck = dash_ckpt()
    blob = ckpt_io.save(tmp_path / "a.ckpt", ck)
    back = ckpt_io.load(tmp_path / "a.ckpt", "dash-mlp")
    np.testing.assert_array_equal(back.params, net.flat_params())
    assert (back.seed, back.iterations) == (7, 123)
    assert dash_from_checkpoint(back).describe() == net.describe()
    ckpt_io.save(tmp_path / "b.ckpt", back)
    assert (tmp_path / "b.ckpt").read_bytes() == blob


def test_payload_is_little_endian_f64():
    net, ck = dash_ckpt()
    blob = ckpt_io.encode(ck)
    payload = net.flat_params().astype("<f8").tobytes()
    assert blob[:8] == b"MORSECKP" and payload in blob
    assert blob.index(payload) + len(payload) + 32 == len(blob)


def test_corruption_and_truncation(tmp_path):
    _, ck = dash_ckpt()
    blob = bytearray(ckpt_io.encode(ck))
    flipped = bytearray(blob)
    flipped[-100] ^= 0x01
    with pytest.raises(IntegrityError, match="checksum"):
        ckpt_io.decode(bytes(flipped))
    with pytest.raises(IntegrityError, match="length"):
        ckpt_io.decode(bytes(blob[:-9]))
    with pytest.raises(IntegrityError):
        ckpt_io.decode(b"NOTACKPT" + bytes(blob[8:]))
    bad_version = bytearray(blob)
    bad_version[8] = 9
    with pytest.raises(IntegrityError, match="version"):
        ckpt_io.decode(bytes(bad_version))


def test_kind_and_fingerprint_checks(tmp_path):
    _, ck = dash_ckpt()
    ckpt_io.save(tmp_path / "d.ckpt", ck)
    with pytest.raises(ckpt_io.KindMismatchError):
        ckpt_io.load(tmp_path / "d.ckpt", "shared-dot")
    other = make_linear_schedule(500).fingerprint()
    with pytest.raises(ckpt_io.FingerprintMismatchError) as e:
        ckpt_io.load(tmp_path / "d.ckpt", "dash-mlp", other)
    assert other in str(e.value) and ck.schedule_fingerprint in str(e.value)


def test_dot_checkpoint_is_tied_to_its_dash():
    net, _ = dash_ckpt()
    dot = SharedDot(net, InputMask(True, False, True), rank=3, rng=np.random.default_rng(1))
    dot.set_params([p + 0.1 for p in dot.params])
    fp = make_linear_schedule().fingerprint()
    back = dot_from_checkpoint(ckpt_io.decode(ckpt_io.encode(dot_checkpoint(dot, 0, 5, fp))), net)
    np.testing.assert_array_equal(back.flat_params(), dot.flat_params())
    assert back.mask == dot.mask and back.rank == 3
    other = MlpDenoiser(2, hidden=(8, 8), temb_dim=4, rng=np.random.default_rng(9))
    with pytest.raises(IntegrityError):
        dot_from_checkpoint(ckpt_io.decode(ckpt_io.encode(dot_checkpoint(dot, 0, 5, fp))), other)


# -- chain blocks and threads -----------------------------------------------

def test_chain_blocks_independent_of_threads():
    def fn(rng, size):
        return rng.standard_normal((size, 2))

    one = run_chains(fn, 1000, 128, 5, threads=1)
    four = run_chains(fn, 1000, 128, 5, threads=4)
    assert one.shape == (1000, 2)
    np.testing.assert_array_equal(one, four)


def test_thread_resolution():
    assert resolve_threads(None, {}) == 1
    assert resolve_threads(None, {"MORSE_THREADS": "3"}) == 3
    assert resolve_threads(2, {"MORSE_THREADS": "3"}) == 2
    with pytest.raises(ConfigurationError):
        resolve_threads(None, {"MORSE_THREADS": "many"})
    with pytest.raises(ConfigurationError):
        resolve_threads(0, {})


# -- command line -----------------------------------------------------------

def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(TINY)
    out = root / "run"
    assert main(["train-dash", "--config", str(cfg), "--out", str(out)]) == 0
    dash_hash = file_sha256(out / "dash.ckpt")
    assert main(["train-dot", "--config", str(cfg), "--out", str(out)]) == 0
    assert file_sha256(out / "dash.ckpt") == dash_hash
    assert main(["bench", "--config", str(cfg), "--out", str(out), "--threads", "1"]) == 0
    return cfg, out


def test_training_artifacts(tiny_run):
    _, out = tiny_run
    rows = read_rows(out / "dash_loss.csv")
    assert rows[0] == ["iteration", "loss"] and len(rows) == 61 and rows[1][0] == "1"
    report = json.loads((out / "dot_validation.json").read_text())
    assert report["mask"] == {"use_x_ts": True, "use_z_ts": True, "use_t_s": True}
    assert report["validation_size"] == 256
    assert {"trained_mse", "zero_predictor_mse"} <= set(report)


def test_bench_csv_schemas(tiny_run):
    _, out = tiny_run
    curves = read_rows(out / "curves.csv")
    assert curves[0] == CURVE_COLUMNS
    assert read_rows(out / "speedup.csv")[0] == SPEEDUP_COLUMNS
    sweep = read_rows(out / "sweep.csv")
    assert sweep[0] == SWEEP_COLUMNS and len(sweep) == 1 + 2 * 3
    for label, lat, n, d, k, metric, se in curves[1:]:
        if label == "baseline":
            assert float(lat) == int(n) == int(d) and k == "0"
        else:
            assert float(lat) == int(d) + int(k) / 4.0
        assert float(se) >= 0


def test_bench_is_deterministic_across_threads(tiny_run, tmp_path):
    cfg, out = tiny_run
    again = tmp_path / "again"
    args = ["bench", "--config", str(cfg), "--out", str(again), "--dash-ckpt", str(out / "dash.ckpt"),
            "--dot-ckpt", str(out / "dot.ckpt"), "--threads", "3"]
    assert main(args) == 0
    for name in ("curves.csv", "speedup.csv", "sweep.csv", "bench_summary.json"):
        assert (again / name).read_bytes() == (out / name).read_bytes()


def test_retraining_is_bit_identical(tiny_run, tmp_path):
    cfg, out = tiny_run
    assert main(["train-dash", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "dash.ckpt").read_bytes() == (out / "dash.ckpt").read_bytes()
    assert (tmp_path / "dash_loss.csv").read_bytes() == (out / "dash_loss.csv").read_bytes()
    assert main(["train-dot", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "dot.ckpt").read_bytes() == (out / "dot.ckpt").read_bytes()


def test_seed_flag_changes_run(tiny_run, tmp_path):
    cfg, out = tiny_run
    assert main(["train-dash", "--config", str(cfg), "--out", str(tmp_path), "--seed", "4"]) == 0
    assert ckpt_io.load(tmp_path / "dash.ckpt").seed == 4
    assert (tmp_path / "dash.ckpt").read_bytes() != (out / "dash.ckpt").read_bytes()


def test_oracle_bench_matches_dense_baseline(tiny_run, tmp_path):
    cfg, out = tiny_run
    text = TINY.replace("grid_sizes: [2, 3, 4, 6, 8, 12]", "grid_sizes: [2, 3, 4, 5, 6, 8, 9, 10, 12]")
    cfg2 = tmp_path / "oracle.yaml"
    cfg2.write_text(text)
    assert main(["bench", "--config", str(cfg2), "--out", str(tmp_path), "--dash-ckpt", str(out / "dash.ckpt"),
                 "--oracle-dot"]) == 0
    rows = read_rows(tmp_path / "curves.csv")[1:]
    base = {int(r[2]): float(r[5]) for r in rows if r[0] == "baseline"}
    oracle = [r for r in rows if r[0] == "morse-oracle"]
    assert oracle
    for _, lat, n, _, _, metric, se in oracle:
        # identical chains, so the metric agrees far inside Monte-Carlo error
        assert float(metric) == pytest.approx(base[int(n)], abs=1e-9 + 1e-6 * float(se))
        assert float(lat) < int(n)


def test_sample_command(tiny_run, tmp_path):
    cfg, out = tiny_run
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path), "--dash-ckpt", str(out / "dash.ckpt"),
                 "--dot-ckpt", str(out / "dot.ckpt"), "--chain-source", "previous"]) == 0
    rows = read_rows(tmp_path / "samples.csv")
    assert rows[0] == ["x0", "x1"] and len(rows) == 301


def test_exit_codes(tiny_run, tmp_path):
    cfg, out = tiny_run
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 1\n")
    assert main(["train-dash", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text(TINY.replace("  iterations: 60\n", "  iterations: 60\n  momentum: 0.9\n"))
    assert main(["train-dash", "--config", str(bad), "--out", str(tmp_path)]) == 2
    corrupt = tmp_path / "corrupt.ckpt"
    blob = bytearray((out / "dash.ckpt").read_bytes())
    blob[200] ^= 0xFF
    corrupt.write_bytes(bytes(blob))
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path), "--dash-ckpt", str(corrupt),
                 "--oracle-dot"]) == 4
    # a Dash checkpoint where a Dot is expected
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path), "--dash-ckpt", str(out / "dash.ckpt"),
                 "--dot-ckpt", str(out / "dash.ckpt")]) == 4
    other = tmp_path / "other.yaml"
    other.write_text(TINY + "schedule: {T: 500}\n")
    assert main(["train-dot", "--config", str(other), "--out", str(tmp_path),
                 "--dash-ckpt", str(out / "dash.ckpt")]) == 4


def test_diverging_training_exits_3(tmp_path):
    cfg = tmp_path / "hot.yaml"
    cfg.write_text(TINY.replace("  iterations: 60\n", "  iterations: 60\n  lr: 1.0e+300\n", 1))
    assert main(["train-dash", "--config", str(cfg), "--out", str(tmp_path)]) == 3


def test_smoke_config_trains_quickly(tmp_path):
    start = time.perf_counter()
    assert main(["train-dash", "--config", str(ROOT / "configs" / "gaussian_smoke.yaml"), "--out",
                 str(tmp_path)]) == 0
    assert time.perf_counter() - start < 60
