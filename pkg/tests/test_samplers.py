import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from morse.diffusion import NoiseSchedule, eps_to_x0, make_linear_schedule
from morse.errors import OrderingError, RangeError, ShapeError
from morse.estimators import AnalyticGaussianDash, GaussianDataSpec
from morse.samplers import (Executor, SamplerKind, TimeGrid, ddim_step, ddpm_step, run_sampler,
                            select_time_grid)

SCHED = make_linear_schedule()


def three_point_schedule():
    # index 2: (0.6, 0.8); index 1: (0.9, sqrt(0.19))
    return NoiseSchedule.from_alphas([1.0, 0.9, 0.6])


@pytest.mark.parametrize("T,n,expected", [
    (1000, 4, (1000, 750, 500, 250, 0)),
    (1000, 1, (1000, 0)),
    (10, 10, tuple(range(10, -1, -1))),
    (1000, 3, (1000, 667, 333, 0)),
])
def test_select_time_grid(T, n, expected):
    assert select_time_grid(T, n).points == expected


@pytest.mark.parametrize("n", [0, 11])
def test_select_time_grid_range(n):
    with pytest.raises(RangeError):
        select_time_grid(10, n)


def test_time_grid_validation():
    with pytest.raises(RangeError):
        TimeGrid((5,))
    with pytest.raises(RangeError):
        TimeGrid((5, 1))
    with pytest.raises(OrderingError):
        TimeGrid((5, 5, 0))


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 2000), data=st.data())
def test_grid_shape(T, data):
    n = data.draw(st.integers(1, T))
    g = select_time_grid(T, n)
    assert g.points[0] == T and g.points[-1] == 0 and g.n_steps == n


def test_ddim_examples():
    s = NoiseSchedule.from_alphas([1.0, np.sqrt(0.9), 0.8])
    out = ddim_step([0.8, 0.6], [0.0, 1.0], 2, 1, s)
    np.testing.assert_allclose(out, [0.9486833, 0.3162278], atol=1e-7)
    x, z = np.array([0.3, 0.1]), np.array([-1.0, 2.0])
    np.testing.assert_array_equal(ddim_step(x, z, 2, 2, s), x)
    np.testing.assert_allclose(ddim_step(x, z, 2, 0, s), eps_to_x0(x, z, 2, s))


def test_ddim_errors():
    with pytest.raises(OrderingError):
        ddim_step(np.zeros(2), np.zeros(2), 10, 20, SCHED)
    with pytest.raises(ShapeError):
        ddim_step(np.zeros(2), np.zeros(3), 20, 10, SCHED)


def test_ddpm_hand_computed():
    # sigma_tilde^2 = (0.19/0.64)(1 - 0.36/0.81) = 0.1649306; x0_hat = 1; mean = 0.9791667
    out = ddpm_step([1.0], [0.5], 2, 1, three_point_schedule(), [1.0])
    assert out[0] == pytest.approx(1.385283, abs=1e-6)


def test_ddpm_reductions():
    rng = np.random.default_rng(0)
    x, z = rng.standard_normal((2, 3))
    # zero noise with a zero posterior variance (t_prev = 0) gives x0_hat
    np.testing.assert_allclose(ddpm_step(x, z, 500, 0, SCHED, rng.standard_normal(3)), eps_to_x0(x, z, 500, SCHED))
    np.testing.assert_array_equal(ddpm_step(x, z, 500, 500, SCHED, np.zeros(3)), x)
    with pytest.raises(ShapeError):
        ddpm_step(x, z, 500, 10, SCHED, np.zeros(2))


@settings(max_examples=80, deadline=None)
@given(ts=st.lists(st.integers(1, 1000), min_size=3, max_size=3, unique=True), seed=st.integers(0, 2**31))
def test_ddim_semigroup(ts, seed):
    t, u, s = sorted(ts, reverse=True)
    rng = np.random.default_rng(seed)
    x, z = rng.standard_normal((2, 4))
    two_hops = ddim_step(ddim_step(x, z, t, u, SCHED), z, u, s, SCHED)
    np.testing.assert_allclose(two_hops, ddim_step(x, z, t, s, SCHED), atol=1e-10, rtol=0)


@settings(max_examples=50, deadline=None)
@given(t=st.integers(1, 1000), seed=st.integers(0, 2**31))
def test_ddim_identity(t, seed):
    x, z = np.random.default_rng(seed).standard_normal((2, 3))
    np.testing.assert_array_equal(ddim_step(x, z, t, t, SCHED), x)


def test_point_mass_sampler_hits_mean():
    mu = np.array([1.5, -2.0])
    dash = AnalyticGaussianDash(GaussianDataSpec(mu, np.zeros((2, 2))), SCHED)
    for n in (1, 3, 17):
        x, rec = run_sampler(dash, select_time_grid(1000, n), SCHED, rng=np.random.default_rng(n), n_chains=5)
        np.testing.assert_allclose(x, np.broadcast_to(mu, x.shape), atol=1e-9)
        assert len(rec) == n


@pytest.mark.parametrize("kind", list(SamplerKind))
def test_sampler_records_and_determinism(kind):
    dash = AnalyticGaussianDash(GaussianDataSpec([0.5, 0.0], np.diag([0.5, 2.0])), SCHED)
    grid = select_time_grid(1000, 7)
    x1, rec = run_sampler(dash, grid, SCHED, kind, np.random.default_rng(3), n_chains=4)
    x2, _ = run_sampler(dash, grid, SCHED, kind, np.random.default_rng(3), n_chains=4)
    np.testing.assert_array_equal(x1, x2)
    assert len(rec) == grid.n_steps
    for a, b in zip(rec, rec[1:]):
        np.testing.assert_array_equal(a.x_out, b.x_in)
        assert a.t_out == b.t_in
    assert all(r.executor is Executor.DASH for r in rec)
    np.testing.assert_array_equal(rec[-1].x_out, x1)


def test_sampler_law_matches_oracle():
    from morse.metrics import exact_ddim_gaussian_oracle

    data = GaussianDataSpec([1.0, -1.0], np.diag([0.5, 2.0]))
    dash = AnalyticGaussianDash(data, SCHED)
    grid = select_time_grid(1000, 5)
    n = 100_000
    x, _ = run_sampler(dash, grid, SCHED, rng=np.random.default_rng(11), n_chains=n, record=False)
    exact = exact_ddim_gaussian_oracle(grid, data, SCHED)
    se = np.sqrt(np.diag(exact.cov) / n)
    assert np.all(np.abs(x.mean(0) - exact.mean) < 3 * se)
    var_se = np.diag(exact.cov) * np.sqrt(2 / (n - 1))
    assert np.all(np.abs(x.var(0, ddof=1) - np.diag(exact.cov)) < 3 * var_se)
