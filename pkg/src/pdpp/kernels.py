"""Correlation kernels, biorthogonal families and determinantal densities.

Conventions: particle coordinates ``x`` are 1-indexed in formulas and stored as
0-indexed tuples.  ``side="up"`` means ``x`` is nondecreasing (particles pushed
upwards by their lower neighbour), ``side="down"`` means nonincreasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from ._numerics import composite_rule, iterated_integral, subdivide
from .pearson import (Model, besq_density, besq_density_dy, c_sum, constant_c, lambda_N,
                      speed_density, squared_bessel)
from .polyflow import Poly, divided_difference, flow, q_polys

UP, DOWN = "up", "down"


def _check_side(side: str) -> str:
    if side not in (UP, DOWN):
        raise ValueError(f"side must be {UP!r} or {DOWN!r}, got {side!r}")
    return side


def vandermonde(y) -> float:
    """``prod_{i<j} (y_j - y_i)``."""
    y = np.asarray(y, dtype=float)
    out = 1.0
    for j in range(len(y)):
        for i in range(j):
            out *= y[j] - y[i]
    return out


@dataclass(frozen=True)
class KernelConfig:
    """Model, initial condition and (optional) observation time."""

    model: Model
    x: tuple
    t: float | None = None
    side: str = UP

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        _check_side(self.side)
        if len(self.x) != self.model.N:
            raise ValueError(f"initial condition has {len(self.x)} entries, model has N={self.model.N}")
        d = np.diff(self.x)
        if (self.side == UP and np.any(d < 0)) or (self.side == DOWN and np.any(d > 0)):
            raise ValueError(f"initial condition is not in the {self.side} chamber")
        spec = self.model.spec
        xs = np.asarray(self.x)
        if np.any(xs < spec.l) or np.any(xs >= spec.r) or (np.any(xs == spec.l) and self.model.family != "besq"):
            raise ValueError("initial condition outside the state interval")
        if self.t is not None and not self.t > 0:
            raise ValueError("time must be positive")

    @property
    def N(self) -> int:
        return self.model.N

    def xk(self, k: int) -> float:
        return self.x[k - 1]


# ------------------------------------------------------- extended kernel ----

@dataclass(frozen=True, eq=False)
class ExtendedKernel:
    """Kernel on pairs ``((index, point), (index, point))``.

    ``block(i1, Y1, i2, Y2)`` evaluates the full kernel on a grid.  Kernels whose
    cross-index part contains ``-(y1-y2)^(d-1)/(d-1)! 1(y2<y1)`` also expose
    ``volterra(i1, i2) -> d`` (0 when absent) and ``regular`` (the block without
    that term), which the Fredholm module integrates exactly.
    """

    indices: tuple
    block: Callable
    side: str | None = None
    volterra: Callable | None = None
    regular: Callable | None = None
    support: tuple = (-math.inf, math.inf)
    scale: float = 1.0
    domain: tuple = (-math.inf, math.inf)
    name: str = "kernel"
    meta: dict = field(default_factory=dict)

    def __call__(self, p1, p2) -> float:
        (i1, y1), (i2, y2) = p1, p2
        return float(self.block(i1, np.array([float(y1)]), i2, np.array([float(y2)]))[0, 0])

    def matrix(self, pts: Sequence[tuple]) -> np.ndarray:
        n = len(pts)
        out = np.empty((n, n))
        for a, (i1, y1) in enumerate(pts):
            for b, (i2, y2) in enumerate(pts):
                out[a, b] = self((i1, y1), (i2, y2))
        return out


def corr_rho(kernel: ExtendedKernel, pts: Sequence[tuple]) -> float:
    """Correlation function ``det(K(p_i, p_j))``."""
    return float(np.linalg.det(kernel.matrix(pts))) if pts else 1.0


def _volterra_block(d: int, Y1, Y2) -> np.ndarray:
    diff = Y1[:, None] - Y2[None, :]
    return np.where(diff > 0, diff ** (d - 1) / math.factorial(d - 1), 0.0)


# -------------------------------------------------------- Psi and Phi ----

def psi(cfg: KernelConfig, n: int, j: int, y, representation: int | None = None):
    """``Psi_j^{(n)}(y)`` with ``j = n - i`` for ``i = 1..N`` (``j`` may be negative).

    Representation 1 differentiates the level-``n`` density in its starting
    point (needs ``i <= n``); representation 2 differentiates (or, for ``i > n``,
    integrates from ``l``) the level-``i`` density in its end point.
    """
    N, t = cfg.N, cfg.t
    cfg.model.sys.check_level(n)
    i = n - j
    if not 1 <= i <= N:
        raise ValueError(f"index j={j} out of range for level {n}")
    rep = representation or (1 if i <= n else 2)
    y = np.asarray(y, dtype=float)
    if rep == 1:
        if i > n:
            raise ValueError("first representation needs i <= n")
        sign = (-1) ** (N - n) * math.exp(t * c_sum(cfg.model.sys, n))
        return sign * cfg.model.provider(n).dx(j, t, cfg.xk(i), y)
    sign = (-1) ** (N - i) * math.exp(t * c_sum(cfg.model.sys, i))
    prov = cfg.model.provider(i)
    if j >= 0:
        return sign * prov.dy(j, t, cfg.xk(i), y)
    return sign * prov.antiderivative(-j, t, cfg.xk(i), y)


class _Families:
    """Cached q-polynomials and Phi-polynomials for one configuration."""

    def __init__(self, cfg: KernelConfig):
        self.cfg = cfg
        self._q: dict = {}
        self._phi: dict = {}

    def q(self, n: int) -> list[Poly]:
        if n not in self._q:
            self._q[n] = q_polys(self.cfg.x, n)
        return self._q[n]

    def phi(self, n: int, i: int) -> Poly:
        key = (n, i)
        if key not in self._phi:
            cfg = self.cfg
            sys = cfg.model.sys
            if not 0 <= i < n:
                raise ValueError("phi index must satisfy 0 <= i < n")
            factor = (-1) ** (i + n - cfg.N) * math.exp(-cfg.t * c_sum(sys, n))
            self._phi[key] = flow(sys, n, -cfg.t, self.q(n)[i]) * factor
        return self._phi[key]


def phi(cfg: KernelConfig, n: int, i: int) -> Poly:
    """``Phi_i^{(n)}``, a polynomial of degree ``i``."""
    return _Families(cfg).phi(n, i)


def _support(cfg: KernelConfig, levels=None) -> tuple[float, float, float]:
    lo, hi, sc = math.inf, -math.inf, 0.0
    for k in (levels or range(1, cfg.N + 1)):
        prov = cfg.model.provider(k)
        for i in range(1, cfg.N + 1):
            a, b = prov.support(cfg.t, cfg.xk(i))
            lo, hi = min(lo, a), max(hi, b)
            sc = max(sc, prov.scale(cfg.t, cfg.xk(i)))
    return lo, hi, sc


def kernel_frakK(cfg: KernelConfig, levels: Sequence[int] | None = None) -> ExtendedKernel:
    """The kernel of the reflected systems (either side).

    ``K[(n1,y1);(n2,y2)] = -(y1-y2)^(n2-n1-1)/(n2-n1-1)! 1(y2<y1) 1(n2>n1)
    + sum_{k=1}^{n2} Psi_{n1-k}^{(n1)}(y1) Phi_{n2-k}^{(n2)}(y2)``.
    """
    if cfg.t is None:
        raise ValueError("kernel needs a time")
    fam = _Families(cfg)
    cache: dict = {}
    levels = tuple(levels) if levels is not None else tuple(range(1, cfg.N + 1))

    def psi_vals(n1: int, k: int, Y1: np.ndarray) -> np.ndarray:
        key = (n1, k, Y1.tobytes())
        if key not in cache:
            cache[key] = np.asarray(psi(cfg, n1, n1 - k, Y1), dtype=float)
        return cache[key]

    def regular(n1, Y1, n2, Y2):
        Y1, Y2 = np.asarray(Y1, float), np.asarray(Y2, float)
        out = np.zeros((len(Y1), len(Y2)))
        for k in range(1, n2 + 1):
            out += np.outer(psi_vals(n1, k, Y1), fam.phi(n2, n2 - k)(Y2))
        return out

    def volterra(n1, n2):
        return n2 - n1 if n2 > n1 else 0

    def block(n1, Y1, n2, Y2):
        Y1, Y2 = np.asarray(Y1, float), np.asarray(Y2, float)
        out = regular(n1, Y1, n2, Y2)
        d = volterra(n1, n2)
        if d:
            out -= _volterra_block(d, Y1, Y2)
        return out

    lo, hi, sc = _support(cfg)
    spec = cfg.model.spec
    # pushed particles travel beyond the free supports; widen by a few widths
    widen = 2.0 * cfg.N * sc
    support = (max(spec.l, lo - widen), min(spec.r, hi + widen))
    return ExtendedKernel(levels, block, cfg.side, volterra, regular, support, sc,
                          (spec.l, spec.r), "frakK", {"cfg": cfg})


def brownian_origin_kernel(N: int, t: float, levels: Sequence[int] | None = None) -> ExtendedKernel:
    """Closed-form kernel for standard Brownian particles all started at 0.

    Assembled only from Hermite polynomials and repeated Gaussian integrals, so
    it is independent of the flow, the q-polynomials and numerical quadrature.
    """
    st = math.sqrt(t)

    def gauss(y):
        return np.exp(-0.5 * y * y / t) / math.sqrt(2 * math.pi * t)

    def rep_int(m, y):
        # int_{-inf}^y (y-u)^(m-1)/(m-1)! gauss(u) du = t^{(m-1)/2} j_m(y/sqrt t)
        v = y / st
        j0, j1 = np.exp(-0.5 * v * v) / math.sqrt(2 * math.pi), special.ndtr(v)
        for r in range(2, m + 1):
            j0, j1 = j1, (v * j1 + j0) / (r - 1)
        return st ** (m - 1) * j1

    def herm(n, v):
        h0, h1 = np.ones_like(v), v
        if n == 0:
            return h0
        for k in range(1, n):
            h0, h1 = h1, v * h1 - k * h0
        return h1

    def psi_(n, k, y):
        if k <= n:
            return (-1) ** (N - n) * st ** (-(n - k)) * herm(n - k, y / st) * gauss(y)
        return (-1) ** (N - k) * rep_int(k - n, y)

    def phi_(n, i, y):
        return (-1) ** (n - N) / math.factorial(i) * st ** i * herm(i, y / st)

    def block(n1, Y1, n2, Y2):
        Y1, Y2 = np.asarray(Y1, float), np.asarray(Y2, float)
        out = np.zeros((len(Y1), len(Y2)))
        for k in range(1, n2 + 1):
            out += np.outer(psi_(n1, k, Y1), phi_(n2, n2 - k, Y2))
        if n2 > n1:
            out -= _volterra_block(n2 - n1, Y1, Y2)
        return out

    levels = tuple(levels) if levels is not None else tuple(range(1, N + 1))
    return ExtendedKernel(levels, block, UP, name="brownian-origin")


# ------------------------------------------------ squared Bessel kernel ----

def _besq_theta(cfg: KernelConfig) -> float:
    if cfg.model.family != "besq":
        raise ValueError("this kernel is defined for the squared Bessel family")
    theta = float(cfg.model.params["theta"])
    if theta < 2:
        raise ValueError("squared Bessel kernel needs theta >= 2")
    if cfg.side != DOWN:
        raise ValueError("squared Bessel kernel is stated for the down chamber")
    return theta


def _u_rule(cfg: KernelConfig, y1max: float, order: int = 24):
    """Quadrature in the walk start ``u`` covering all thresholds and the density bulk."""
    theta = float(cfg.model.params["theta"])
    dim = theta + 2 * cfg.N
    t = cfg.t
    reach = math.sqrt(2 * t * (math.log(1e16) + dim)) + math.sqrt(2 * t * dim)
    top = (math.sqrt(max(y1max, 0.0)) + reach) ** 2 + max(cfg.x)
    lo = min(cfg.x)
    scale = max(0.5 * math.sqrt(4 * top * t), 0.25 * t)
    breaks = subdivide(np.concatenate([[lo, top], np.asarray(cfg.x)]), scale)
    nodes, weights = composite_rule(breaks, order)
    return nodes.ravel(), weights.ravel()


def kernel_frakB(cfg: KernelConfig, levels: Sequence[int] | None = None) -> ExtendedKernel:
    """Squared Bessel kernel via the random-walk representation (exact sum form).

    The level-sum is traded for a single integral against the dimension
    ``4 - theta - 2N`` density, whose ``n1`` derivatives in ``y1`` are evaluated
    in closed form.
    """
    theta = _besq_theta(cfg)
    N, t, x = cfg.N, cfg.t, cfg.x
    sys = cfg.model.sys
    fam = _Families(cfg)
    dim = theta + 2 * N

    def flowed_q(n2, k):
        return flow(sys, n2, -t, fam.q(n2)[k])

    def regular(n1, Y1, n2, Y2):
        Y1, Y2 = np.asarray(Y1, float), np.asarray(Y2, float)
        u, w = _u_rule(cfg, float(np.max(Y1)))
        # d^{n1}/dy1^{n1} p_{4-theta-2N}(y1, u) = d^{n1}/dy1^{n1} p_{theta+2N}(u, y1)
        D = besq_density_dy(dim, n1, t, u[None, :], Y1[:, None]) * w[None, :]
        out = np.zeros((len(Y1), len(Y2)))
        for k in range(n2):
            a = x[n2 - k - 1]
            m = n2 - k
            g = np.where(u > a, (u - a) ** (m - 1) / math.factorial(m - 1), 0.0)
            out += np.outer(D @ g, flowed_q(n2, k)(Y2))
        return out

    def volterra(n1, n2):
        return n2 - n1 if n2 > n1 else 0

    def block(n1, Y1, n2, Y2):
        Y1, Y2 = np.asarray(Y1, float), np.asarray(Y2, float)
        out = regular(n1, Y1, n2, Y2)
        if n2 > n1:
            out -= _volterra_block(n2 - n1, Y1, Y2)
        return out

    lo, hi, sc = _support(cfg)
    levels = tuple(levels) if levels is not None else tuple(range(1, N + 1))
    return ExtendedKernel(levels, block, DOWN, volterra, regular, (0.0, hi + 2 * N * sc), sc,
                          (0.0, math.inf), "frakB", {"cfg": cfg})


def frakB_path_integral(cfg: KernelConfig, n1: int, y1: float, n2: int, Y2) -> np.ndarray:
    """Kernel value obtained by integrating the same-level kernel ``n2 - n1`` times in ``y1`` from 0.

    For ``n2 > n1`` this equals ``-(y1-y2)^(d-1)/(d-1)! 1(y2<y1)`` plus the
    ``d``-fold integral of the level-``n2`` kernel, ``d = n2 - n1``.
    """
    Y2 = np.atleast_1d(np.asarray(Y2, dtype=float))
    B = kernel_frakB(cfg)
    d = n2 - n1
    if d <= 0:
        return B.block(n1, np.array([float(y1)]), n2, Y2)[0]
    scale = max(math.sqrt(cfg.t * max(y1, cfg.t)), 0.05 * cfg.t)
    out = np.empty_like(Y2)
    for b, y2 in enumerate(Y2):
        f = lambda u: B.regular(n2, u.ravel(), n2, np.array([y2]))[:, 0].reshape(u.shape)
        out[b] = iterated_integral(f, d, [float(y1)], 0.0, scale, grade=True)[0]
    out -= _volterra_block(d, np.array([float(y1)]), Y2)[0]
    return out


def frakB_mc(cfg: KernelConfig, n1: int, y1: float, n2: int, y2: float, n_walks: int = 100_000,
             seed: int = 0, chunk: int = 5000) -> tuple[float, float]:
    """Monte Carlo evaluation of the squared Bessel kernel at one point pair.

    The deterministic level-sum is replaced by the expectation over a random
    walk with Exp(1) steps to the left, stopped when it first exceeds the next
    coordinate.  Returns ``(mean, standard error)``.
    """
    theta = _besq_theta(cfg)
    N, t, x = cfg.N, cfg.t, np.asarray(cfg.x)
    sys = cfg.model.sys
    u, w = _u_rule(cfg, y1)
    D = besq_density_dy(theta + 2 * N, n1, t, u, y1) * w
    mono = np.array([flow(sys, n2, -t, Poly.monomial(j))(y2) for j in range(n2)])
    rng = np.random.Generator(np.random.Philox(seed))
    first = -(y1 - y2) ** (n2 - n1 - 1) / math.factorial(n2 - n1 - 1) if (n2 > n1 and y2 < y1) else 0.0
    total, total_sq, done = 0.0, 0.0, 0
    while done < n_walks:
        b = min(chunk, n_walks - done)
        S = np.concatenate([np.zeros((b, 1)), np.cumsum(rng.exponential(size=(b, n2)), axis=1)], axis=1)
        est = _rw_weights(S, u, x, n2, mono) @ D
        total += est.sum()
        total_sq += (est ** 2).sum()
        done += b
    mean = total / n_walks
    var = max(total_sq / n_walks - mean ** 2, 0.0)
    return first + mean, math.sqrt(var / n_walks)


def _rw_weights(S: np.ndarray, u: np.ndarray, x: np.ndarray, n: int, poly_vals: np.ndarray) -> np.ndarray:
    """Per-walk values ``e^{u-R_tau} P(R_tau) 1(tau<n)`` on a grid of starts ``u``.

    ``S[:, k]`` are cumulative step sums (``R_k = u - S_k``) and ``poly_vals[j]``
    holds the flowed monomial ``z^j`` evaluated at the target point, so that the
    polynomial ``(R - z)^m / m!`` is expanded binomially.
    """
    b = S.shape[0]
    R = u[None, None, :] - S[:, :n, None]                     # (walks, k, u)
    hit = R >= x[None, :n, None]
    tau = np.where(hit.any(axis=1), hit.argmax(axis=1), n)    # (walks, u)
    out = np.zeros((b, len(u)))
    for k in range(n):
        sel = tau == k
        if not sel.any():
            continue
        Rk = R[:, k, :]
        m = n - k - 1
        val = np.zeros_like(Rk)
        for j in range(m + 1):
            val += math.comb(m, j) * Rk ** (m - j) * (-1) ** j * poly_vals[j]
        val *= np.exp(np.minimum(S[:, k, None], 700.0)) / math.factorial(m)
        out += np.where(sel, val, 0.0)
    return out


def rw_expectation(x: Sequence[float], n: int, y1: float, y2: float) -> float:
    """Closed form ``sum_k [d^{-(n-k)} delta_{x_{n-k}}](y1) q_k^{(n)}(y2)``."""
    x = np.asarray(x, dtype=float)
    qs = q_polys(x, n)
    total = 0.0
    for k in range(n):
        a = x[n - k - 1]
        m = n - k
        if y1 > a:
            total += (y1 - a) ** (m - 1) / math.factorial(m - 1) * float(qs[k](y2))
    return total


def rw_expectation_mc(x: Sequence[float], n: int, y1: float, y2: float, n_walks: int = 100_000,
                      seed: int = 0) -> tuple[float, float]:
    """Monte Carlo side of :func:`rw_expectation`; returns ``(mean, standard error)``."""
    x = np.asarray(x, dtype=float)
    if np.any(np.diff(x) > 0):
        raise ValueError("x must be nonincreasing")
    rng = np.random.Generator(np.random.Philox(seed))
    S = np.concatenate([np.zeros((n_walks, 1)), np.cumsum(rng.exponential(size=(n_walks, n)), axis=1)], axis=1)
    mono = np.array([float(y2) ** j for j in range(n)])
    vals = _rw_weights(S, np.array([float(y1)]), x, n, mono)[:, 0]
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_walks))


def bessel_commutation_check(theta: float, k: int, t: float, x: float, z_grid) -> float:
    """Max deviation between the ``k``-fold integral of the dimension-``theta``
    density and the integral of the dimension ``4 - theta - 2k`` density against
    ``(y - x)^(k-1)/(k-1)!`` on ``(x, inf)``."""
    if theta < 2 or k < 1:
        raise ValueError("need theta >= 2 and k >= 1")
    prov = squared_bessel(1, theta).provider(1)
    z_grid = np.asarray(z_grid, dtype=float)
    lhs = prov.antiderivative(k, t, x, z_grid)
    dim = 4 - theta - 2 * k
    rhs = np.empty_like(z_grid)
    for a, z in enumerate(z_grid):
        f = lambda y: float(besq_density(dim, t, z, y)) * (y - x) ** (k - 1) / math.factorial(k - 1)
        hi = (math.sqrt(z) + math.sqrt(2 * t * 60) + math.sqrt(2 * t * abs(dim) + 8 * t)) ** 2 + x
        rhs[a] = integrate.quad(f, x, hi, points=[z] if x < z < hi else None, limit=400,
                                epsabs=1e-12, epsrel=1e-11)[0]
    return float(np.max(np.abs(lhs - rhs)))


# ------------------------------------------------ non-colliding kernel ----

def _require_up(cfg: KernelConfig):
    if cfg.side != UP:
        raise ValueError("non-colliding formulas need x in the up chamber")


def Q_func(cfg: KernelConfig, i: int, s: float, y):
    """Divided difference over ``x_1..x_i`` of ``z -> density(s, z, y)`` (top level)."""
    _require_up(cfg)
    prov = cfg.model.provider(cfg.N)
    y = np.asarray(y, dtype=float)
    return divided_difference(lambda z: prov.evaluate(s, z, y), cfg.x[:i],
                              lambda z, j: prov.dx(j, s, z, y), max_order=prov.max_order)


def Q_sum(cfg: KernelConfig, i: int, s: float, y):
    """Partial-fraction form of :func:`Q_func`, valid for distinct coordinates."""
    prov = cfg.model.provider(cfg.N)
    x = cfg.x[:i]
    total = 0.0
    for m, xm in enumerate(x):
        denom = np.prod([xm - xk for k, xk in enumerate(x) if k != m])
        total = total + prov.evaluate(s, xm, y) / denom
    return total


def P_poly(cfg: KernelConfig, i: int, t: float) -> Poly:
    """``e^{-tL} prod_{k<i} (z - x_k)`` at the top level."""
    sys = cfg.model.sys
    return flow(sys, sys.N, -t, Poly.from_roots(cfg.x[: i - 1]))


def kernel_K(cfg: KernelConfig, times: Sequence[float]) -> ExtendedKernel:
    """Space-time kernel of the non-colliding system (divided-difference form)."""
    _require_up(cfg)
    times = tuple(float(s) for s in times)
    if any(s <= 0 for s in times) or list(times) != sorted(set(times)):
        raise ValueError("times must be positive and strictly increasing")
    N = cfg.N
    prov = cfg.model.provider(N)
    cacheQ: dict = {}
    cacheP: dict = {}

    def Qv(i, s, Y):
        key = (i, s, Y.tobytes())
        if key not in cacheQ:
            cacheQ[key] = np.asarray(Q_func(cfg, i, s, Y), dtype=float)
        return cacheQ[key]

    def Pp(i, t):
        if (i, t) not in cacheP:
            cacheP[(i, t)] = P_poly(cfg, i, t)
        return cacheP[(i, t)]

    def block(s, Y1, t, Y2):
        Y1, Y2 = np.asarray(Y1, float), np.asarray(Y2, float)
        out = np.zeros((len(Y1), len(Y2)))
        for i in range(1, N + 1):
            out += np.outer(Qv(i, s, Y1), Pp(i, t)(Y2))
        if t < s:
            out -= prov.evaluate(s - t, Y2[None, :], Y1[:, None])
        return out

    lo, hi, sc = math.inf, -math.inf, 0.0
    for s in times:
        for xi in cfg.x:
            a, b = prov.support(s, xi)
            lo, hi, sc = min(lo, a), max(hi, b), max(sc, prov.scale(s, xi))
    spec = cfg.model.spec
    support = (max(spec.l, lo - 2 * N * sc), min(spec.r, hi + 2 * N * sc))
    return ExtendedKernel(times, block, UP, None, None, support, sc, (spec.l, spec.r), "K", {"cfg": cfg})


# ------------------------------------------------ determinantal densities ----

def km_semigroup_density(cfg: KernelConfig, t: float, y) -> float:
    """Transition density of the non-colliding system from ``x`` to ``y``.

    Written as ``e^{-t lambda_N} Delta(y) det(Q_i^{(t)}(y_j))``, which equals
    ``Delta(y)/Delta(x) det(density(t, x_i, y_j))`` for distinct ``x`` and extends
    continuously to coinciding starts.
    """
    _require_up(cfg)
    y = np.asarray(y, dtype=float)
    if np.any(np.diff(y) <= 0):
        return 0.0
    M = np.array([np.atleast_1d(Q_func(cfg, i, t, y)) for i in range(1, cfg.N + 1)])
    return float(math.exp(-t * lambda_N(cfg.model.sys)) * vandermonde(y) * np.linalg.det(M))


def in_DN(rows: Sequence[Sequence[float]]) -> bool:
    """Interlacing ``z_i^{(n+1)} < z_i^{(n)} <= z_{i+1}^{(n+1)}``."""
    for n in range(len(rows) - 1):
        lower, upper = rows[n + 1], rows[n]
        for i in range(len(upper)):
            if not (lower[i] < upper[i] <= lower[i + 1]):
                return False
    return True


def signed_density(cfg: KernelConfig, rows: Sequence[Sequence[float]]) -> float:
    """Signed density on interlacing arrays whose marginals are the Schütz densities."""
    N, t = cfg.N, cfg.t
    if len(rows) != N or any(len(r) != n + 1 for n, r in enumerate(rows)):
        raise ValueError("array must have rows of lengths 1..N")
    if not in_DN(rows):
        raise ValueError("array violates the interlacing constraints")
    prov = cfg.model.provider(N)
    top = np.asarray(rows[-1], dtype=float)
    M = np.array([prov.dx(N - i, t, cfg.xk(i), top) for i in range(1, N + 1)])
    weight = math.exp(-t * sum(k * constant_c(cfg.model.sys, k) for k in range(1, N)))
    return (-1) ** (N * (N - 1) // 2) * weight * float(np.linalg.det(M))


def schutz_density(cfg: KernelConfig, side: str, y) -> float:
    """Transition density of the reflected system, ``det[d^{j-i} density_i(x_i, .)](y_j)``.

    Negative powers integrate from ``l`` (side up) or, with sign, from ``r`` (side down).
    """
    _check_side(side)
    N, t = cfg.N, cfg.t
    y = np.asarray(y, dtype=float)
    M = np.empty((N, N))
    for i in range(1, N + 1):
        prov = cfg.model.provider(i)
        xi = cfg.xk(i)
        for j in range(1, N + 1):
            d = j - i
            if d >= 0:
                M[i - 1, j - 1] = prov.dy(d, t, xi, y[j - 1])
            else:
                M[i - 1, j - 1] = prov.antiderivative(-d, t, xi, y[j - 1], from_right=(side == DOWN))[0]
    return float(np.linalg.det(M))


def invariant_measure_density(model: Model, y, anchor: float | None = None) -> float:
    """Unnormalised invariant density ``prod m(y_i) Delta(y)^2`` on the up chamber."""
    y = np.asarray(y, dtype=float)
    if np.any(np.diff(y) <= 0):
        return 0.0
    return float(np.prod(speed_density(model.spec, y, anchor)) * vandermonde(y) ** 2)
