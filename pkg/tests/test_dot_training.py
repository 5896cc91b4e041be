import numpy as np
import pytest

from morse.datasets import RingMixture
from morse.diffusion import NoiseSchedule, forward_diffuse, make_linear_schedule
from morse.dot_training import (DotTrainConfig, DotTrainingExample, StepPair, dot_loss, make_training_example,
                                make_training_examples, sample_step_pair, sample_step_pairs, train_dot)
from morse.engine import InputMask, ZeroDot
from morse.errors import ConfigurationError, ContractError, RangeError
from morse.estimators import AnalyticGaussianDash, GaussianDataSpec
from morse.nn import MlpDenoiser
from morse.samplers import SamplerKind, ddim_step
from morse.shared_dot import SharedDot

SCHED = make_linear_schedule()


class ConstDot:
    dim = 1

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)

    def residual(self, x_ts, x_ti, z_ts, t_s, t_i):
        return self.values


def test_step_pair_validation():
    StepPair(5, 0)
    with pytest.raises(RangeError):
        StepPair(3, 3)
    with pytest.raises(RangeError):
        StepPair(2, -1)


def test_pairs_are_ordered():
    t_s, t_o = sample_step_pairs(np.random.default_rng(0), 1000, 50_000)
    assert np.all(t_s > t_o) and t_o.min() >= 0 and t_s.max() <= 1000
    p = sample_step_pair(np.random.default_rng(1), 1000)
    assert 1000 >= p.t_s > p.t_o >= 0


def test_t2_pairs_uniform():
    # the three ordered pairs of {0, 1, 2}, each with probability 1/3
    t_s, t_o = sample_step_pairs(np.random.default_rng(7), 2, 100_000)
    codes = t_s * 3 + t_o
    assert set(np.unique(codes)) == {3, 6, 7}
    sd = np.sqrt(100_000 * (1 / 3) * (2 / 3))
    for c in (3, 6, 7):
        assert abs((codes == c).sum() - 100_000 / 3) < 3 * sd


def test_max_gap():
    t_s, t_o = sample_step_pairs(np.random.default_rng(3), 1000, 2000, max_gap=1)
    np.testing.assert_array_equal(t_s - t_o, 1)
    t_s, t_o = sample_step_pairs(np.random.default_rng(3), 1000, 2000, max_gap=40)
    assert (t_s - t_o).max() <= 40
    with pytest.raises(ConfigurationError):
        sample_step_pairs(np.random.default_rng(0), 1000, 1, max_gap=0)
    with pytest.raises(ConfigurationError):
        sample_step_pairs(np.random.default_rng(0), 1, 1)


def test_point_mass_example_by_hand():
    # 1-D point mass at mu: x0_hat = mu exactly, so eps_hat = (x - alpha mu) / sigma
    s = NoiseSchedule.from_alphas([1.0, 0.9, 0.6])
    mu = 2.0
    dash = AnalyticGaussianDash(GaussianDataSpec([mu], [[0.0]]), s)
    ex = make_training_example([mu], [0.5], StepPair(2, 1), dash, SamplerKind.DDIM, s)
    x_ts = 0.6 * mu + 0.8 * 0.5
    z_ts = (x_ts - 0.6 * mu) / 0.8  # recovers eps = 0.5
    x_to = 0.9 * mu + np.sqrt(0.19) * z_ts
    z_to = (x_to - 0.9 * mu) / np.sqrt(0.19)
    assert ex.x_ts[0] == pytest.approx(x_ts, abs=1e-14)
    assert ex.z_ts[0] == pytest.approx(0.5, abs=1e-14)
    assert ex.x_to[0] == pytest.approx(x_to, abs=1e-14)
    assert ex.target[0] == pytest.approx(z_to - z_ts, abs=1e-13)
    assert abs(ex.target[0]) < 1e-13  # the trajectory of a point mass keeps eps fixed


def test_target_identity():
    net = MlpDenoiser(2, hidden=(32, 32), rng=np.random.default_rng(0))
    rng = np.random.default_rng(1)
    x0 = RingMixture().sample(rng, 64)
    eps = rng.standard_normal((64, 2))
    t_s, t_o = sample_step_pairs(rng, 1000, 64)
    for kind in SamplerKind:
        b = make_training_examples(x0, eps, t_s, t_o, net, SCHED, kind, np.random.default_rng(2))
        np.testing.assert_array_equal(b.z_to, net.estimate(b.x_to, t_o))
        np.testing.assert_array_equal(b.target, b.z_to - b.z_ts)
        # adding the difference back is exact up to one rounding of the larger operand
        scale = np.maximum(np.abs(b.z_to), np.abs(b.z_ts))
        assert np.all(np.abs(b.z_ts + b.target - b.z_to) <= 2 * np.finfo(float).eps * scale)
        np.testing.assert_array_equal(b.x_ts, forward_diffuse(x0, t_s, eps, SCHED))
    b = make_training_examples(x0, eps, t_s, t_o, net, SCHED)
    np.testing.assert_array_equal(b.x_to, ddim_step(b.x_ts, b.z_ts, t_s, t_o, SCHED))


def test_rollout_hops_reach_target_time():
    net = MlpDenoiser(2, hidden=(16,), rng=np.random.default_rng(0))
    rng = np.random.default_rng(1)
    x0, eps = rng.standard_normal((2, 8, 2))
    one = make_training_examples(x0, eps, 900, 100, net, SCHED)
    three = make_training_examples(x0, eps, 900, 100, net, SCHED, rollout_hops=3)
    np.testing.assert_array_equal(one.z_ts, three.z_ts)
    assert not np.allclose(one.x_to, three.x_to)
    np.testing.assert_array_equal(three.z_to, net.estimate(three.x_to, 100))


def test_example_errors():
    dash = AnalyticGaussianDash(GaussianDataSpec([0.0], [[1.0]]), SCHED)
    with pytest.raises(RangeError):
        make_training_examples([[0.0]], [[1.0]], 0, 0, dash, SCHED)
    with pytest.raises(ContractError):
        make_training_examples([[0.0]], [[1.0]], 10, 0, dash, SCHED, SamplerKind.DDPM)


def test_target_shrinks_with_gap():
    data = GaussianDataSpec([1.0, -1.0], np.diag([0.5, 2.0]))
    dash = AnalyticGaussianDash(data, SCHED)
    rng = np.random.default_rng(4)
    x0 = data.sample(rng, 2000)
    eps = rng.standard_normal((2000, 2))
    medians = [np.median(np.linalg.norm(make_training_examples(x0, eps, 600, 600 - g, dash, SCHED).target, axis=1))
               for g in (100, 10, 1)]
    assert medians[0] > medians[1] > medians[2] > 0


def batch_of(targets):
    t = np.asarray(targets, dtype=np.float64)[:, None]
    z = np.zeros_like(t)
    n = len(t)
    return DotTrainingExample(z, z, z, np.full(n, 5), np.full(n, 2), t)


def test_dot_loss_examples():
    b = batch_of([1.0, -1.0])
    assert dot_loss(ConstDot([[0.0], [0.0]]), b) == 1.0
    assert dot_loss(ConstDot([[1.0], [-1.0]]), b) == 0.0
    b3 = batch_of([0.5, 2.0, -1.0])
    assert dot_loss(ZeroDot(1), b3) == pytest.approx(np.mean(b3.target[:, 0] ** 2))
    with pytest.raises(ContractError):
        dot_loss(ZeroDot(1), batch_of([]))


@pytest.fixture(scope="module")
def tiny_dash():
    from morse.training import train_dash

    net = MlpDenoiser(2, hidden=(32, 32), temb_dim=8, rng=np.random.default_rng(0))
    return train_dash(RingMixture(), SCHED, net, 300, seed=0)[0]


def test_train_dot_freezes_base_and_is_deterministic(tiny_dash):
    before = tiny_dash.flat_params().copy()
    cfg = DotTrainConfig(iterations=40, batch_size=64, seed=3, validation_size=256)
    runs = []
    for _ in range(2):
        dot = SharedDot(tiny_dash, rng=np.random.default_rng(1))
        runs.append(train_dot(tiny_dash, dot, RingMixture(), SCHED, cfg))
    np.testing.assert_array_equal(tiny_dash.flat_params(), before)
    np.testing.assert_array_equal(runs[0][1], runs[1][1])
    rep = runs[0][2].as_dict()
    assert rep["validation_size"] == 256 and rep["mask"] == InputMask().as_dict()
    assert rep["trained_mse"] < rep["zero_predictor_mse"]


def test_train_dot_rejects_bad_config(tiny_dash):
    dot = SharedDot(tiny_dash)
    with pytest.raises(ConfigurationError):
        train_dot(tiny_dash, dot, RingMixture(), SCHED, DotTrainConfig(iterations=0))
