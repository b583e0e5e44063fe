import json
import math

import numpy as np
import pytest

from oracles import gl
from pdpp.kernels import KernelConfig, km_semigroup_density, schutz_density
from pdpp.pearson import brownian, ornstein_uhlenbeck, squared_bessel
from pdpp.polyflow import Poly
from pdpp.simulate import (BLOCK, ArrayState, SimConfig, SimulationError, block_rng, empirical_cdf,
                           hist_density, ks_critical, ks_distance, martingale_check, project_edges,
                           sample_uniform_array, simulate_array, simulate_noncolliding, simulate_reflected)


# ---------------------------------------------------------------- config ----

def test_sim_config_defaults_and_validation():
    cfg = SimConfig((0.5, 2.0))
    assert cfg.dt == pytest.approx(2e-3)
    assert cfg.steps() == [(250, 0.002), (750, 0.002)]
    for bad in (dict(times=(1.0, 0.5)), dict(times=(0.0,)), dict(times=(1.0,), n_paths=0),
                dict(times=(1.0,), dt=-1.0), dict(times=(1.0,), scheme="exact"),
                dict(times=(1.0,), threads=0), dict(times=(1.0,), seed=-1)):
        with pytest.raises(ValueError):
            SimConfig(**bad)


# ------------------------------------------------------------- reflected ----

def test_single_particle_is_plain_euler():
    m = ornstein_uhlenbeck(1, 0.7, 0.5, 0.1)
    cfg = SimConfig((0.3,), 50, seed=9, dt=0.01)
    got = simulate_reflected(cfg, "up", (0.2,), m).at(0.3)[:, 0]
    rng = block_rng(9, 0, 0)
    X = np.full((50, 1), 0.2)
    for _ in range(30):
        X = X + (-0.7 * X + 0.1) * 0.01 + math.sqrt(2 * 0.5 * 0.01) * rng.standard_normal(X.shape)
    assert np.array_equal(got, X[:, 0])


def test_top_particle_is_pushed_up():
    paths = simulate_reflected(SimConfig((1.0,), 20_000, seed=1), "up", (0.0, 0.0), brownian(2))
    top = paths.at(1.0)[:, 1]
    assert top.mean() > 3 * top.std() / math.sqrt(len(top))


@pytest.mark.parametrize("side,x0", [("up", (-0.5, 0.0, 0.5)), ("down", (0.5, 0.0, -0.5))])
def test_reflected_keeps_order(side, x0):
    paths = simulate_reflected(SimConfig((0.5, 1.0), 2000, seed=2), side, x0, brownian(3))
    d = np.diff(paths.values, axis=2)
    assert np.all(d >= 0) if side == "up" else np.all(d <= 0)
    assert 0 < paths.stats["push_fraction"] < 0.5


def test_reflected_besq_stays_nonnegative():
    paths = simulate_reflected(SimConfig((1.0,), 2000, seed=3), "down", (0.5, 0.2, 0.0), squared_bessel(3, 3.0))
    assert paths.values.min() >= 0


def test_reflected_rejects_bad_input():
    with pytest.raises(ValueError):
        simulate_reflected(SimConfig((1.0,), 10), "up", (0.5, 0.0), brownian(2))
    with pytest.raises(ValueError):
        simulate_reflected(SimConfig((1.0,), 10), "left", (0.0, 0.5), brownian(2))
    with pytest.raises(SimulationError):
        simulate_reflected(SimConfig((1.0,), 500, dt=1.0), "up", (0.0, 0.0, 0.0), brownian(3))


def _two_particle_cdf(density, a, b, lo, panels=24):
    """``P(y1 <= a, y2 <= b)`` over the ordered region ``y1 <= y2``."""
    y1, w1 = gl(lo, min(a, b), panels, 16)
    total = 0.0
    for u, wu in zip(y1, w1):
        y2, w2 = gl(u, b, 12, 16)
        total += wu * sum(wv * density([u, v]) for v, wv in zip(y2, w2))
    return total


@pytest.mark.slow
def test_reflected_matches_schutz_cdf():
    m, x, t = brownian(2), (-0.3, 0.4), 0.8
    cfg = KernelConfig(m, x, t)
    sample = simulate_reflected(SimConfig((t,), 100_000, seed=4), "up", x, m).at(t)
    for a, b in [(0.0, 0.5), (0.6, 1.4)]:
        want = _two_particle_cdf(lambda y: schutz_density(cfg, "up", y), a, b, -7.0)
        p, se = empirical_cdf(sample, {0: a, 1: b})
        assert abs(p - want) < 3 * se + 2e-3


# --------------------------------------------------------- non-colliding ----

def test_noncolliding_single_particle():
    m = brownian(1)
    cfg = SimConfig((0.2,), 40, seed=5, dt=0.02)
    got = simulate_noncolliding(cfg, (0.1,), m).at(0.2)[:, 0]
    rng = block_rng(5, 0, 0)
    X = np.full((40, 1), 0.1)
    for _ in range(10):
        X = X + math.sqrt(0.02) * rng.standard_normal(X.shape)
    assert np.allclose(got, X[:, 0], rtol=0, atol=1e-14)


def test_noncolliding_strictly_ordered():
    paths = simulate_noncolliding(SimConfig((0.5, 1.0), 3000, seed=6), (-0.1, 0.0, 0.1), brownian(3))
    assert np.all(np.diff(paths.values, axis=2) > 0)
    assert paths.stats["rejection_rate"] <= 0.01
    with pytest.raises(ValueError):
        simulate_noncolliding(SimConfig((1.0,), 10), (0.0, 0.0), brownian(2))


def test_noncolliding_besq_positive():
    paths = simulate_noncolliding(SimConfig((1.0,), 2000, seed=7), (0.2, 0.7, 1.5), squared_bessel(3, 3.0))
    assert paths.values.min() > 0


@pytest.mark.parametrize("sim", ["reflected", "noncolliding", "array"])
def test_worker_count_does_not_change_samples(sim):
    n = 2 * BLOCK + 17
    m = brownian(3)
    runs = []
    for threads in (1, 3):
        cfg = SimConfig((0.05, 0.1), n, seed=123, threads=threads)
        if sim == "reflected":
            runs.append(simulate_reflected(cfg, "up", (-0.2, 0.0, 0.2), m).values)
        elif sim == "noncolliding":
            runs.append(simulate_noncolliding(cfg, (-0.2, 0.0, 0.2), m).values)
        else:
            runs.append(simulate_array(cfg, (-0.5, 0.0, 0.5), m).values)
    assert np.array_equal(runs[0], runs[1])


# ---------------------------------------------------------------- arrays ----

def test_uniform_array_examples():
    a = sample_uniform_array((0.7,), 5, seed=1)
    assert a.N == 1 and np.all(a.rows[0] == 0.7)
    a = sample_uniform_array((0.0, 1.0), 40_000, seed=2)
    y = a.rows[0][:, 0]
    assert abs(y.mean() - 0.5) < 3 * y.std() / math.sqrt(len(y))
    assert a.interlaced().all()
    with pytest.raises(ValueError):
        sample_uniform_array((1.0, 0.0), 3)


def test_uniform_array_level_density():
    """Level 2 under top (x1, x2, x3) has density 2 Delta_2(y) / Delta_3(x) on the slots."""
    x1, x2, x3 = -1.0, 0.0, 2.0
    a = sample_uniform_array((x1, x2, x3), 100_000, seed=3)
    d3 = (x2 - x1) * (x3 - x1) * (x3 - x2)
    y1 = a.rows[1][:, 0]
    edges = np.linspace(x1, x2, 9)
    # marginal of y1: (2 / d3) int_{x2}^{x3} (v - y1) dv, integrated over each bin in closed form
    F = lambda u: (2 / d3) * 0.5 * ((x3 - x2) * (x3 + x2) * u - (x3 - x2) * u * u)
    want = np.diff(F(edges))
    assert want.sum() == pytest.approx(1.0)
    counts = np.histogram(y1, edges)[0] / len(y1)
    se = np.sqrt(counts * (1 - counts) / len(y1))
    assert np.all(np.abs(counts - want) < 3 * se)


def test_project_edges():
    assert project_edges([[0.5], [0.2, 0.9]]) == ((0.5, 0.9), (0.5, 0.2))
    assert project_edges([[0.3]]) == ((0.3,), (0.3,))
    a = sample_uniform_array((-1.0, 0.0, 0.5, 2.0), 1000, seed=4)
    up, down = project_edges(a)
    assert np.all(np.diff(up, axis=1) >= 0) and np.all(np.diff(down, axis=1) <= 0)
    assert ArrayState.from_flat(a.flat(), 4).rows[2].shape == (1000, 3)


def test_array_dynamics_interlace():
    paths = simulate_array(SimConfig((0.5, 1.0), 4000, seed=8), (-1.0, 0.0, 1.0), brownian(3))
    for s in paths.times:
        assert ArrayState.from_flat(paths.at(s), 3).interlaced().all()
    assert paths.stats["discard_rate"] < 0.01
    assert paths.labels == ("1.1", "2.1", "2.2", "3.1", "3.2", "3.3")


def test_array_single_level_is_one_diffusion():
    m = brownian(1)
    cfg = SimConfig((0.2,), 30, seed=10, dt=0.02)
    start = ArrayState((np.full((30, 1), 0.4),))
    got = simulate_array(cfg, (0.4,), m, start).at(0.2)[:, 0]
    ref = simulate_reflected(cfg, "up", (0.4,), m).at(0.2)[:, 0]
    assert np.array_equal(got, ref)


@pytest.mark.slow
def test_array_top_row_matches_noncolliding_density():
    m, top, t = brownian(2), (-0.5, 0.5), 0.6
    cfg = KernelConfig(m, top)
    rows = ArrayState.from_flat(simulate_array(SimConfig((t,), 100_000, seed=11), top, m).at(t), 2).rows[1]
    for a, b in [(0.0, 0.8), (-0.6, 1.5), (0.9, 0.9)]:
        want = _two_particle_cdf(lambda y: km_semigroup_density(cfg, t, y), a, b, -6.0)
        p, se = empirical_cdf(rows, {0: a, 1: b})
        assert abs(p - want) < 3 * se + 2e-3


# ------------------------------------------------------------ estimators ----

def test_martingale_check():
    cfg = SimConfig((1.0,), 50_000, seed=12)
    mean, se = martingale_check(brownian(), 1, Poly([1.0]), 1.0, cfg, 0.0)
    assert mean == 1.0 and se == 0.0
    mean, se = martingale_check(brownian(), 1, Poly.monomial(2), 1.0, cfg, 0.0)
    assert abs(mean) < 4 * se
    p = Poly([0.2, -1.0, 0.5, 0.3])
    for model, k, x0 in [(ornstein_uhlenbeck(2, 0.8, 0.5, 0.2), 1, 0.4), (squared_bessel(2, 2.5), 1, 1.3),
                         (squared_bessel(2, 2.5), 2, 0.0)]:
        mean, se = martingale_check(model, k, p, 0.7, cfg, x0)
        assert abs(mean - float(p(x0))) < 4 * se


def test_estimators():
    s = np.random.default_rng(0).normal(size=(1000, 3))
    assert ks_distance(s[:, 0], s[:, 0]) == 0.0
    assert ks_critical(100, 100, 0.05) == pytest.approx(1.358 * math.sqrt(2 / 100), rel=1e-3)
    p, se = empirical_cdf(s, {0: 0.0, 2: 10.0})
    assert p == pytest.approx(np.mean(s[:, 0] <= 0))
    assert se == pytest.approx(math.sqrt(p * (1 - p) / 1000))
    p2, _ = empirical_cdf(s, {0: 0.0}, "-")
    assert p2 == pytest.approx(1 - p)
    dens, se = hist_density(np.sort(s, axis=1), np.linspace(-6, 6, 25))
    assert float(np.sum(dens * 0.5)) == pytest.approx(3.0)
    for fn in (lambda: ks_distance([], [1.0]), lambda: empirical_cdf([], {0: 1.0}),
               lambda: hist_density([], [0, 1])):
        with pytest.raises(ValueError):
            fn()


def test_csv_export(tmp_path):
    paths = simulate_reflected(SimConfig((0.5, 1.0), 3, seed=13), "up", (0.0, 0.1), brownian(2))
    out = paths.to_csv(tmp_path / "paths.csv")
    lines = out.read_text().splitlines()
    assert lines[0] == "# schema_version=1" and lines[1] == "path_id,time,index,value"
    assert len(lines) == 2 + 2 * 3 * 2
    first = lines[2].split(",")
    assert float(first[3]) == paths.values[0, 0, 0]
    manifest = json.loads((tmp_path / "paths.csv.json").read_text())
    assert manifest["config"]["seed"] == 13 and manifest["config"]["side"] == "up"
