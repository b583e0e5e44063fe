import math

import numpy as np
import pytest
from scipy import integrate, linalg

from oracles import nested_q
from pdpp.pearson import brownian, ornstein_uhlenbeck, squared_bessel
from pdpp.polyflow import (Poly, RootCollision, apply_L, divided_difference, elementary_symmetric,
                           expm_taylor, flow, flow_vs_classical, generator_matrix, hermite, hermite_poly,
                           laguerre, laguerre_poly, leading_factor, q_polys, root_flow)


# -------------------------------------------------------------------- Poly ----

def test_poly_normalises_trailing_zeros():
    assert Poly([1.0, 2.0, 0.0, 0.0]).coeffs == (1.0, 2.0)
    assert Poly([0.0, 0.0]).coeffs == (0.0,)
    assert Poly([0.0]).degree == 0
    assert Poly.from_json(Poly([3.0, 0.0, 1.0]).to_json()) == Poly([3.0, 0.0, 1.0])


def test_poly_arithmetic():
    p, q = Poly([1.0, 1.0]), Poly([-1.0, 1.0])
    assert p * q == Poly([-1.0, 0.0, 1.0])
    assert (p + 1) == Poly([2.0, 1.0])
    assert (1 - p) == Poly([0.0, -1.0])
    assert Poly.from_roots([1.0, 2.0]) == Poly([2.0, -3.0, 1.0])
    assert Poly([1.0, 2.0, 3.0]).deriv(2) == Poly([6.0])


# --------------------------------------------------------------- generator ----

def test_apply_L_examples():
    assert apply_L(brownian(2).sys, 1, Poly([3.0])) == Poly([0.0])
    m = squared_bessel(3, 2.5)
    assert apply_L(m.sys, 3, Poly([0.0, 1.0])) == Poly([2.5])
    assert apply_L(brownian().sys, 1, Poly.monomial(2)) == Poly([1.0])


def test_generator_matrix_is_banded():
    G = generator_matrix(ornstein_uhlenbeck(3, 0.7, 0.4, 0.2).sys, 2, 7)
    assert np.all(np.tril(G, -1) == 0)
    assert np.all(np.triu(G, 3) == 0)


def test_expm_taylor_matches_scipy():
    rng = np.random.default_rng(3)
    for _ in range(10):
        A = np.triu(rng.normal(size=(9, 9))) * rng.uniform(0.1, 5)
        want = linalg.expm(A)
        assert np.allclose(expm_taylor(A), want, rtol=1e-11, atol=1e-11 * np.max(np.abs(want)))


# -------------------------------------------------------------------- flow ----

def test_flow_examples():
    t = 0.37
    for m in (brownian(), squared_bessel(1, 3.0), ornstein_uhlenbeck(1, 0.5)):
        assert flow(m.sys, 1, -t, Poly([2.5])) == Poly([2.5])
    got = flow(brownian().sys, 1, -t, Poly.monomial(2))
    assert np.allclose(got.c, [-t, 0.0, 1.0], atol=1e-15)
    got = flow(squared_bessel(1, 3.0).sys, 1, -t, Poly.monomial(1))
    assert np.allclose(got.c, [-3.0 * t, 1.0], atol=1e-15)


@pytest.mark.parametrize("model", [brownian(2), ornstein_uhlenbeck(2, 0.8, 0.5, 0.3), squared_bessel(2, 2.5)])
def test_flow_semigroup_and_leading_coefficient(model):
    rng = np.random.default_rng(11)
    for _ in range(20):
        p = Poly(rng.normal(size=rng.integers(2, 10)))
        s, t = rng.uniform(-1, 1, 2)
        k = int(rng.integers(1, 3))
        lhs = flow(model.sys, k, s, flow(model.sys, k, t, p)).c
        rhs = flow(model.sys, k, s + t, p).c
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * np.max(np.abs(rhs))
        q = flow(model.sys, k, t, p)
        assert q.degree == p.degree
        assert q.leading / p.leading == pytest.approx(leading_factor(model.sys, k, t, p.degree), rel=1e-10)


@pytest.mark.parametrize("model,x", [(brownian(), 0.3), (ornstein_uhlenbeck(1, 0.9, 0.5, 0.2), -0.4),
                                     (squared_bessel(1, 3.0), 1.2)])
def test_flow_matches_expectation(model, x):
    t = 0.6
    p = Poly([0.5, -1.0, 0.3, 0.2, -0.05])
    prov = model.provider(1)
    lo, hi = prov.support(t, x)
    want = integrate.quad(lambda y: float(prov.evaluate(t, x, y) * p(y)), lo, hi, points=[x],
                          limit=400, epsabs=1e-12, epsrel=1e-12)[0]
    assert abs(float(flow(model.sys, 1, t, p)(x)) - want) < 1e-6


# ------------------------------------------------------------ q-polynomials ----

def test_q_polys_conditions():
    x = (-0.7, 0.1, 0.4, 1.3, 2.0)
    for n in range(1, 6):
        qs = q_polys(x, n)
        for k, q in enumerate(qs):
            assert q.degree == k
            for i in range(k + 1):
                want = (-1) ** k if i == k else 0.0
                assert abs(float(q.deriv(i)(x[n - i - 1])) - want) < 1e-10


def test_q_polys_examples():
    assert q_polys((0.3, 1.1), 2)[0] == Poly([1.0])
    q1 = q_polys((0.3, 1.1), 2)[1]
    assert np.allclose(q1.c, [1.1, -1.0])
    xs = 0.8
    for k, q in enumerate(q_polys((xs,) * 5, 5)):
        want = Poly.from_roots([xs] * k) * ((-1) ** k / math.factorial(k))
        assert np.max(np.abs(q.c - want.c)) < 1e-12


def test_q_polys_nested_integral():
    x = (0.9, 0.5, 0.2, -0.3, -0.6)
    for n in range(1, 6):
        qs = q_polys(x, n)
        for k in range(n):
            for z in (-1.0, 0.0, 0.7):
                assert abs(float(qs[k](z)) - nested_q(x, n, k, z)) < 1e-8


def test_q_polys_bad_level():
    with pytest.raises(ValueError):
        q_polys((1.0, 2.0), 3)


# ----------------------------------------------------- divided differences ----

def test_divided_difference_examples():
    sq = lambda z: z * z
    dsq = lambda z, j: [z * z, 2 * z, 2.0][j] if j < 3 else 0.0
    assert divided_difference(sq, (1.0, 2.0)) == pytest.approx(3.0)
    assert divided_difference(sq, (1.0, 1.0), dsq) == pytest.approx(2.0)
    assert divided_difference(lambda z: z ** 3, (0.0, 1.0, 2.0)) == pytest.approx(3.0)


def test_divided_difference_confluent_mean_value():
    f, d = np.exp, lambda z, j: np.exp(z)
    for m in range(1, 6):
        assert divided_difference(f, (0.4,) * m, d) == pytest.approx(math.exp(0.4) / math.factorial(m - 1), rel=1e-13)
    # near-confluent limit
    assert divided_difference(f, (0.4, 0.4, 0.4 + 1e-4), d) == pytest.approx(
        divided_difference(f, (0.4, 0.4, 0.4), d), rel=1e-3)


def test_divided_difference_errors():
    with pytest.raises(ValueError):
        divided_difference(np.exp, (1.0, 1.0))
    with pytest.raises(ValueError):
        divided_difference(np.exp, (2.0, 1.0))
    with pytest.raises(ValueError):
        divided_difference(np.exp, (1.0, 1.0, 1.0), lambda z, j: np.exp(z), max_order=1)


def test_elementary_symmetric():
    assert elementary_symmetric((1, 2, 3), 0) == 1
    assert elementary_symmetric((1, 2, 3), 2) == 11
    assert elementary_symmetric((1.5, -2, 3, 0.5), 4) == pytest.approx(1.5 * -2 * 3 * 0.5)
    with pytest.raises(ValueError):
        elementary_symmetric((1, 2), 3)


# ----------------------------------------------------- classical families ----

def test_hermite_and_laguerre():
    z = np.linspace(-2, 2, 9)
    assert np.all(hermite(0, z) == 1)
    assert np.allclose(hermite(2, z), z ** 2 - 1)
    assert np.all(laguerre(0, 0.7, z) == 1)
    assert np.allclose(laguerre(1, 0.7, z), -z + 1.7)
    for n in range(7):
        explicit = sum((-1) ** m * math.factorial(n) / (math.factorial(m) * math.factorial(n - 2 * m) * 2 ** m)
                       * z ** (n - 2 * m) for m in range(n // 2 + 1))
        assert np.allclose(hermite(n, z), explicit, rtol=1e-12, atol=1e-12)
        assert np.allclose(hermite_poly(n)(z), explicit, rtol=1e-12, atol=1e-12)
        alpha = 0.3
        explicit = sum((-1) ** k * math.gamma(n + alpha + 1) / (math.gamma(k + alpha + 1) * math.factorial(n - k))
                       * z ** k / math.factorial(k) for k in range(n + 1))
        assert np.allclose(laguerre(n, alpha, z), explicit, rtol=1e-12, atol=1e-12)
        assert np.allclose(laguerre_poly(n, alpha)(z), explicit, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("n", range(0, 11))
def test_flow_vs_classical(n):
    rb = flow_vs_classical(squared_bessel(1, 3.0).sys, 1, 0.05, n, "besq")
    rw = flow_vs_classical(brownian().sys, 1, 0.5, n, "brownian")
    assert rb["max_abs_deviation"] < 1e-12
    assert rw["max_abs_deviation"] < 1e-12
    if n <= 2:
        assert rb["max_abs_deviation"] == pytest.approx(0.0, abs=1e-14)


def test_flow_vs_classical_rejects_other_families():
    with pytest.raises(ValueError):
        flow_vs_classical(ornstein_uhlenbeck(1, 1.0).sys, 1, 0.5, 2, "ou")


# ---------------------------------------------------------------- root flow ----

def test_root_flow_single_root_is_static():
    traj = root_flow(brownian().sys, 1, Poly([-0.3, 1.0]), np.linspace(0, 1, 5))
    assert np.allclose(traj, 0.3)


def test_root_flow_matches_roots_of_flowed_polynomial():
    sys = brownian().sys
    p = Poly([-1.0, 0.0, 1.0])
    ts = np.linspace(0, 0.4, 9)
    traj = root_flow(sys, 1, p, ts)
    for t, row in zip(ts, traj):
        want = np.sort(np.roots(flow(sys, 1, t, p).c[::-1]).real)
        assert np.max(np.abs(row - want)) < 1e-6


def test_root_flow_rejects_double_root():
    with pytest.raises(RootCollision):
        root_flow(brownian().sys, 1, Poly.from_roots([0.5, 0.5]), [0.0, 0.1])


def test_root_flow_detects_collision():
    # roots of z^2 - 1 under the forward flow meet at t = 1
    with pytest.raises(RootCollision):
        root_flow(brownian().sys, 1, Poly([-1.0, 0.0, 1.0]), [0.0, 2.0])
