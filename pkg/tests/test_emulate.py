import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from localgp import bench, kernel, local
from localgp.config import StageConfig
from localgp.design import DesignSet
from localgp.emulate import (FAILURE_LIMIT, default_bounds, emulate, resolve_workers,
                             smooth_theta, theta0_auto)
from localgp.errors import EmulationFailure, InvalidInputError


# theta0_auto

def test_theta0_two_points():
    D = DesignSet(np.array([[0.0, 0.0], [0.3, 0.4]]), np.array([1.0, 2.0]))
    for q in (0.05, 0.5, 0.95):
        assert theta0_auto(D, q) == pytest.approx(0.25, rel=1e-14)


def test_theta0_grid_range(grid_design):
    t = theta0_auto(grid_design, 0.1)
    assert 0 < t <= 8


def test_theta0_subsample_close_to_exact():
    X = bench.lhs(2000, 8, bench.BOREHOLE_DOMAIN, seed=3)
    D = DesignSet(X, np.zeros(2000))
    exact = np.quantile(pdist(X, "sqeuclidean"), 0.1)
    assert abs(theta0_auto(D, 0.1, seed=0) - exact) <= 0.1 * exact


def test_theta0_exact_when_small():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(300, 3))
    D = DesignSet(X, np.zeros(300))
    assert theta0_auto(D, 0.2) == np.quantile(pdist(X, "sqeuclidean"), 0.2)


def test_theta0_deterministic_given_seed():
    X = bench.lhs(3000, 4, None, seed=1)
    D = DesignSet(X, np.zeros(3000))
    assert theta0_auto(D, 0.1, seed=7) == theta0_auto(D, 0.1, seed=7)


def test_theta0_errors():
    D = DesignSet(np.ones((5, 2)), np.arange(5.0))
    with pytest.raises(InvalidInputError):
        theta0_auto(D, 0.1)
    D1 = DesignSet(np.array([[0.0, 0.0], [1.0, 0.0]]), np.zeros(2))
    for q in (0.0, 1.0, -0.1):
        with pytest.raises(InvalidInputError):
            theta0_auto(D1, q)


def test_default_bounds():
    assert default_bounds(2.0) == (2e-3, 2e3)


# smooth_theta

@pytest.fixture(scope="module")
def grid30():
    return bench.gramacy_grid(30)


def test_smooth_constant_field(grid30):
    th = np.full(len(grid30), 0.37)
    np.testing.assert_allclose(smooth_theta(grid30, th, 12), th, rtol=1e-14)


def test_smooth_k1_identity(grid30):
    th = np.random.default_rng(0).lognormal(size=len(grid30))
    np.testing.assert_array_equal(smooth_theta(grid30, th, 1), th)


def test_smooth_spike_reduced(grid30):
    th = np.full(len(grid30), 1.0)
    i = 15 * 30 + 15
    th[i] = np.e ** 3
    out = smooth_theta(grid30, th, 12)
    assert np.log(out[i]) <= 0.5 * np.log(th[i])


def test_smooth_matches_direct_weighted_average(grid30):
    rng = np.random.default_rng(1)
    th = rng.lognormal(size=len(grid30))
    out = smooth_theta(grid30, th, 12)
    for i in rng.choice(len(grid30), 10, replace=False):
        d = np.sqrt(((grid30 - grid30[i]) ** 2).sum(axis=1))
        b = np.sort(d)[11]
        nb = np.flatnonzero(d <= b * (1 + 1e-9))
        w = np.exp(-0.5 * (d[nb] / b) ** 2)
        assert out[i] == pytest.approx(np.exp(w @ np.log(th[nb]) / w.sum()), rel=1e-10)


def test_smooth_ignores_nan(grid30):
    th = np.full(len(grid30), 2.0)
    th[5] = np.nan
    out = smooth_theta(grid30, th, 12)
    np.testing.assert_allclose(out, 2.0, rtol=1e-14)


def test_smooth_k_clamped():
    g = np.array([[0.0], [1.0], [2.0]])
    out = smooth_theta(g, np.array([1.0, 2.0, 4.0]), 50)
    assert out.shape == (3,) and np.all(np.isfinite(out))


def test_smooth_bad_k(grid30):
    with pytest.raises(InvalidInputError):
        smooth_theta(grid30, np.ones(len(grid30)), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 15))
def test_smooth_within_neighbour_range(seed, k):
    rng = np.random.default_rng(seed)
    g = rng.uniform(size=(40, 2))
    th = rng.lognormal(size=40)
    out = smooth_theta(g, th, k)
    assert np.all(out >= th.min() * (1 - 1e-12)) and np.all(out <= th.max() * (1 + 1e-12))


# emulate

def test_emulate_interpolates_training_point(small_grid_design):
    D = small_grid_design
    cfg = StageConfig(method="nn", n0=6, n=6, close=6, eta=1e-10, theta0=0.5, stages=1, mle=False)
    i = 700
    res = emulate(D.X[i:i + 1], D, cfg)
    assert abs(res.mean[0] - D.Y[i]) <= 1e-6


@pytest.fixture(scope="module")
def grid500():
    return bench.lhs(500, 2, bench.GRAMACY_DOMAIN, seed=11)


def test_emulate_workers_identical(small_grid_design, grid500):
    cfg = StageConfig(theta0=0.7, eta=1e-4)
    a = emulate(grid500, small_grid_design, cfg.but(workers=1))
    b = emulate(grid500, small_grid_design, cfg.but(workers=8))
    for f in ("mean", "scale2", "variance", "theta_hat", "dof", "n_used"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    assert a.status == b.status


def test_emulate_location_independence(small_grid_design, grid500):
    cfg = StageConfig(theta0=0.7, eta=1e-4, stages=1)
    full = emulate(grid500, small_grid_design, cfg)
    sub = np.arange(100, 160)
    part = emulate(grid500[sub], small_grid_design, cfg)
    np.testing.assert_array_equal(part.mean, full.mean[sub])
    np.testing.assert_array_equal(part.theta_hat, full.theta_hat[sub])


def test_emulate_result_shape_and_order(small_grid_design, grid500):
    res = emulate(grid500[:40], small_grid_design, StageConfig(theta0=0.7, eta=1e-4, stages=2))
    assert len(res) == 40 and len(res.records) == 40
    np.testing.assert_array_equal(res.grid, grid500[:40])
    assert len(res.theta_by_stage) == 2 and len(res.iters_by_stage) == 2
    assert res.failures == 0
    assert set(res.timing) >= {"stage1", "stage2", "total"}


def test_nn_traces_independent_of_theta0(small_grid_design):
    D = small_grid_design
    rng = np.random.default_rng(4)
    for x in rng.uniform(-1.8, 1.8, (10, 2)):
        traces = []
        for th in (0.01, 0.7, 20.0):
            cfg = StageConfig(method="nn", theta0=th)
            _, rec = local.run_local_design(x, D, cfg, kernel.Hyper(th, 1e-6))
            traces.append([r.row for r in rec])
        assert traces[0] == traces[1] == traces[2]


def test_smooth_final_and_refit_flags_run(small_grid_design, grid500):
    G = grid500[:30]
    base = StageConfig(theta0=0.7, eta=1e-4)
    a = emulate(G, small_grid_design, base.but(smooth_final=True))
    b = emulate(G, small_grid_design, base.but(smooth_final=True, refit_after_smooth=True))
    c = emulate(G, small_grid_design, base)
    for r in (a, b, c):
        assert r.failures == 0 and np.all(np.isfinite(r.mean))
    # smoothed lengthscales are reported when smoothing the final stage
    np.testing.assert_array_equal(a.theta_hat, b.theta_hat)


def test_failure_sentinel_and_aggregate_error():
    # duplicated rows make every local correlation matrix singular at eta = 0
    X = np.repeat(bench.gramacy_grid(5), 2, axis=0)
    D = DesignSet(X, bench.eval_gramacy2d(X))
    cfg = StageConfig(method="nn", n0=6, n=10, close=20, eta=0.0, theta0=0.5, stages=1, mle=False)
    with pytest.raises(EmulationFailure) as info:
        emulate(np.array([[0.1, 0.2], [0.5, -0.5]]), D, cfg)
    res = info.value.result
    assert res.failures == 2
    assert np.all(np.isnan(res.mean)) and all(s != "ok" for s in res.status)


def test_failure_limit_value():
    assert FAILURE_LIMIT == 0.01


def test_emulate_input_errors(small_grid_design):
    D = small_grid_design
    with pytest.raises(InvalidInputError):
        emulate(np.zeros((0, 2)), D)
    with pytest.raises(InvalidInputError):
        emulate(np.zeros((3, 3)), D)
    with pytest.raises(InvalidInputError):
        emulate(np.array([[np.nan, 0.0]]), D)


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv("LOCALGP_WORKERS", raising=False)
    assert resolve_workers() == 1
    assert resolve_workers(3) == 3
    monkeypatch.setenv("LOCALGP_WORKERS", "5")
    assert resolve_workers() == 5
    assert resolve_workers(2) == 2
    monkeypatch.setenv("LOCALGP_WORKERS", "many")
    with pytest.raises(InvalidInputError):
        resolve_workers()


@pytest.mark.slow
def test_parallel_speedup_report(small_grid_design):
    # soft check: report only, fail when parallel is markedly slower
    G = bench.lhs(2000, 2, bench.GRAMACY_DOMAIN, seed=2)
    cfg = StageConfig(theta0=0.7, eta=1e-4, stages=1)
    t = {}
    for w in (1, 4):
        t0 = time.perf_counter()
        emulate(G, small_grid_design, cfg.but(workers=w))
        t[w] = time.perf_counter() - t0
    ratio = t[4] / t[1]
    print(f"speedup report: 1 worker {t[1]:.1f}s, 4 workers {t[4]:.1f}s, ratio {ratio:.2f}")
    import os
    if (os.cpu_count() or 1) >= 4:
        assert ratio <= 0.9
