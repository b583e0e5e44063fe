"""Pearson diffusions: coefficients, level structure, speed measure and densities.

A Pearson diffusion has generator ``a(x) d^2 + b(x) d`` with quadratic
``a(x) = a2 x^2 + a1 x + a0`` and affine ``b(x) = b1 x + b0``.  In a system of
``N`` particles the particle on level ``k`` runs with drift
``b(x) + (N - k) a'(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

from ._numerics import iterated_integral, iterated_integral_right

FAMILIES = ("brownian", "ou", "besq", "custom")
MAX_DERIVATIVE_ORDER = 16
# truncation radius for Gaussian tails, in standard deviations
_GAUSS_RADIUS = 9.5
_TAIL_LOG = math.log(1e14)


def _parse_endpoint(v) -> float:
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("-inf", "-infinity"):
            return -math.inf
        if s in ("inf", "+inf", "infinity"):
            return math.inf
        return float(s)
    return float(v)


@dataclass(frozen=True)
class PearsonSpec:
    """Generator coefficients and state interval ``(l, r)``."""

    a2: float
    a1: float
    a0: float
    b1: float
    b0: float
    l: float = -math.inf
    r: float = math.inf

    def __post_init__(self):
        if not self.l < self.r:
            raise ValueError(f"empty state interval ({self.l}, {self.r})")
        if self.a2 or self.a1:
            for root in np.roots([self.a2, self.a1, self.a0]):
                if abs(root.imag) < 1e-12 and self.l < root.real < self.r:
                    raise ValueError("diffusion coefficient a(x) vanishes inside (l, r)")
        if math.isfinite(self.l) and math.isfinite(self.r):
            probe = 0.5 * (self.l + self.r)
        elif math.isfinite(self.l):
            probe = self.l + 1.0
        elif math.isfinite(self.r):
            probe = self.r - 1.0
        else:
            probe = 0.0
        if not self.a(probe) > 0:
            raise ValueError("diffusion coefficient a(x) must be positive on (l, r)")

    def a(self, x):
        return (self.a2 * x + self.a1) * x + self.a0

    def da(self, x):
        return 2.0 * self.a2 * x + self.a1

    def b(self, x):
        return self.b1 * x + self.b0

    def contains(self, x) -> bool:
        return bool(np.all((np.asarray(x) > self.l) & (np.asarray(x) < self.r)))


@dataclass(frozen=True)
class LevelSystem:
    """A Pearson spec together with the number of particles ``N``."""

    spec: PearsonSpec
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")

    def check_level(self, k: int) -> None:
        if not 1 <= k <= self.N:
            raise ValueError(f"level {k} outside 1..{self.N}")

    def drift_coeffs(self, k: int) -> tuple[float, float]:
        """Return ``(b1, b0)`` of the level-``k`` drift."""
        self.check_level(k)
        s = self.spec
        shift = self.N - k
        return s.b1 + 2.0 * shift * s.a2, s.b0 + shift * s.a1


def level_drift(sys: LevelSystem, k: int, x):
    b1, b0 = sys.drift_coeffs(k)
    return b1 * np.asarray(x, dtype=float) + b0


def constant_c(sys: LevelSystem, k: int) -> float:
    sys.check_level(k)
    return 2.0 * (sys.N - k - 1) * sys.spec.a2 + sys.spec.b1


def c_sum(sys: LevelSystem, lo: int) -> float:
    """Sum of ``c^{(j)}`` over ``j = lo .. N-1`` (empty sum is zero)."""
    return sum(constant_c(sys, j) for j in range(lo, sys.N))


def lambda_N(sys: LevelSystem) -> float:
    N, s = sys.N, sys.spec
    return N * (N - 1) * (2.0 * s.a2 * (N - 2) + 3.0 * s.b1) / 6.0


def default_anchor(spec: PearsonSpec) -> float:
    if math.isfinite(spec.l) and math.isfinite(spec.r):
        return 0.5 * (spec.l + spec.r)
    return 1.0 if (spec.l < 1.0 < spec.r) else (spec.l + 1.0 if math.isfinite(spec.l) else spec.r - 1.0)


def _log_scale_integral(spec: PearsonSpec, anchor: float, y, b1: float, b0: float):
    """``int_anchor^y b/a`` in closed form for the quadratic/affine pair."""
    y = np.asarray(y, dtype=float)
    a2, a1, a0 = spec.a2, spec.a1, spec.a0
    if a2 == 0 and a1 == 0:
        F = lambda z: (0.5 * b1 * z * z + b0 * z) / a0
    elif a2 == 0:
        # b/a = (b1 z + b0)/(a1 z + a0)
        F = lambda z: b1 / a1 * z + (b0 - b1 * a0 / a1) / a1 * np.log(np.abs(a1 * z + a0))
    else:
        disc = a1 * a1 - 4 * a2 * a0
        def F(z):
            base = b1 / (2 * a2) * np.log(np.abs(spec.a(z)))
            k = b0 - b1 * a1 / (2 * a2)
            u = 2 * a2 * z + a1
            if disc < 0:
                s = math.sqrt(-disc)
                tail = 2.0 / s * np.arctan(u / s)
            elif disc > 0:
                s = math.sqrt(disc)
                tail = np.log(np.abs((u - s) / (u + s))) / s
            else:
                tail = -2.0 / u
            return base + k * tail
    return F(y) - F(np.asarray(anchor, dtype=float))


def speed_density(spec: PearsonSpec, y, anchor: float | None = None, deriv: int = 0,
                  drift: tuple[float, float] | None = None):
    """Unnormalised speed density ``m(y) = exp(int_anchor^y b/a) / a(y)``.

    ``deriv`` in {0, 1, 2} returns the corresponding derivative in closed form.
    ``drift`` overrides ``(b1, b0)`` (used for level-shifted generators).
    """
    anchor = default_anchor(spec) if anchor is None else anchor
    y = np.asarray(y, dtype=float)
    if not spec.contains(y) or not spec.l < anchor < spec.r:
        raise ValueError("speed density evaluated outside the open state interval")
    b1, b0 = (spec.b1, spec.b0) if drift is None else drift
    a = spec.a(y)
    m = np.exp(_log_scale_integral(spec, anchor, y, b1, b0)) / a
    if deriv == 0:
        return m
    da, d2a = spec.da(y), 2 * spec.a2
    b, db = b1 * y + b0, b1
    g = (b - da) / a
    if deriv == 1:
        return m * g
    if deriv == 2:
        dg = ((db - d2a) * a - (b - da) * da) / (a * a)
        return m * (g * g + dg)
    raise ValueError("deriv must be 0, 1 or 2")


def stationarity_residual(spec: PearsonSpec, y, anchor: float | None = None):
    """``(a m)'' - (b m)'`` evaluated with closed-form derivatives."""
    y = np.asarray(y, dtype=float)
    m0, m1, m2 = (speed_density(spec, y, anchor, d) for d in range(3))
    a, da, d2a = spec.a(y), spec.da(y), 2 * spec.a2
    b, db = spec.b(y), spec.b1
    return d2a * m0 + 2 * da * m1 + a * m2 - db * m0 - b * m1


# ---------------------------------------------------------------- Bessel ----

def bessel_I(nu: float, z):
    """Modified Bessel function of the first kind, ``I_nu(z)``."""
    return special.iv(nu, np.asarray(z, dtype=float))


def _bessel_kernel(mu: float, t: float, x, y):
    """``(1/2t) (y/x)^{mu/2} exp(-(x+y)/2t) I_mu(sqrt(xy)/t)`` for any real ``mu``.

    For ``mu = dim/2 - 1 >= 0`` this is the squared Bessel density of dimension
    ``dim``; other orders appear in derivative identities.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    z = np.sqrt(np.maximum(x, 0) * np.maximum(y, 0)) / t
    out = np.empty(x.shape)
    small = z < 1e-6
    if np.any(small):
        ys = np.maximum(y[small], 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            lead = (ys / (2 * t)) ** mu * special.rgamma(mu + 1) if mu != 0 else np.ones_like(ys)
            corr = 1.0 + z[small] ** 2 / (4 * (mu + 1)) if mu != -1 else 1.0
        out[small] = np.exp(-(x[small] + ys) / (2 * t)) / (2 * t) * lead * corr
    big = ~small
    if np.any(big):
        xb, yb, zb = x[big], y[big], z[big]
        logpow = 0.5 * mu * (np.log(yb) - np.log(xb))
        out[big] = (np.exp(logpow - (np.sqrt(xb) - np.sqrt(yb)) ** 2 / (2 * t))
                    * special.ive(mu, zb) / (2 * t))
    return out


def besq_density(dim: float, t: float, x, y):
    """Squared Bessel transition density of dimension ``dim`` on ``(0, inf)``.

    Dimensions below 2 give the killed (sub-Markovian) density obtained from the
    symmetry ``p_dim(x, y) = p_{4-dim}(y, x)``.
    """
    if dim >= 2:
        return _bessel_kernel(dim / 2 - 1, t, x, y)
    return _bessel_kernel(1 - dim / 2, t, y, x)


def _binomial_sum(n: int, t: float, terms):
    total = 0.0
    for j in range(n + 1):
        total = total + math.comb(n, j) * (-1) ** (n - j) * terms(j)
    return total / (2 * t) ** n


def besq_density_dx(dim: float, n: int, t: float, x, y):
    """``n``-th derivative in the starting point of :func:`besq_density`."""
    if dim >= 2:
        nu = dim / 2 - 1
        return _binomial_sum(n, t, lambda j: _bessel_kernel(nu + j, t, x, y))
    nu = 1 - dim / 2
    return _binomial_sum(n, t, lambda j: _bessel_kernel(nu - j, t, y, x))


def besq_density_dy(dim: float, n: int, t: float, x, y):
    """``n``-th derivative in the end point of :func:`besq_density`."""
    if dim >= 2:
        nu = dim / 2 - 1
        return _binomial_sum(n, t, lambda j: _bessel_kernel(nu - j, t, x, y))
    nu = 1 - dim / 2
    return _binomial_sum(n, t, lambda j: _bessel_kernel(nu + j, t, y, x))


# --------------------------------------------------------------- densities ----

def _hermite_prob(n: int, u):
    """Probabilists' Hermite polynomial by the three-term recurrence."""
    h0, h1 = np.ones_like(u), u
    if n == 0:
        return h0
    for k in range(1, n):
        h0, h1 = h1, u * h1 - k * h0
    return h1


def _finite_difference(g, n: int, x):
    """``n``-th derivative of ``g`` at ``x`` by central differences plus one Richardson level.

    Orders 1 and 2 use the 4th-order five-point stencils, order 1 with step
    ``max(1e-5, 1e-5 |x|)``.  Order 2 and higher (binomial stencil) use the step
    ``eps^{1/(n+4)}`` that balances round-off against truncation.
    """
    if n == 0:
        return g(x)
    x = np.asarray(x, dtype=float)
    if n == 1:
        h = np.maximum(1e-5, 1e-5 * np.abs(x))
    else:
        h = np.finfo(float).eps ** (1.0 / (n + 4)) * np.maximum(1.0, np.abs(x))

    def stencil(step):
        if n == 1:
            return (-g(x + 2 * step) + 8 * g(x + step) - 8 * g(x - step) + g(x - 2 * step)) / (12 * step)
        if n == 2:
            return (-g(x + 2 * step) + 16 * g(x + step) - 30 * g(x) + 16 * g(x - step)
                    - g(x - 2 * step)) / (12 * step ** 2)
        total = 0.0
        for j in range(n + 1):
            total = total + (-1) ** j * math.comb(n, j) * g(x + (n / 2 - j) * step)
        return total / step ** n

    coarse, fine = stencil(h), stencil(h / 2)
    gain = 16.0 if n <= 2 else 4.0
    return fine + (fine - coarse) / (gain - 1.0)


@dataclass(frozen=True)
class DensityProvider:
    """Transition density ``e^{tL^{(k)}}(x, y)`` of one level of a family.

    ``family`` is one of ``brownian``, ``ou``, ``besq`` or ``custom``.  For the
    custom family ``evaluator(t, x, y)`` must be supplied; derivatives then come
    from finite differences.
    """

    family: str
    sys: LevelSystem
    k: int
    params: dict = field(default_factory=dict, compare=False, hash=False)
    evaluator: Callable | None = field(default=None, compare=False, hash=False)
    max_order: int = MAX_DERIVATIVE_ORDER

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unsupported family {self.family!r}")
        self.sys.check_level(self.k)
        if self.family == "custom" and self.evaluator is None:
            raise ValueError("custom family needs an evaluator")

    # level coefficients
    @property
    def drift(self) -> tuple[float, float]:
        return self.sys.drift_coeffs(self.k)

    @property
    def dimension(self) -> float:
        """Squared Bessel dimension of this level."""
        if self.family != "besq":
            raise ValueError("dimension is defined for squared Bessel only")
        b1, b0 = self.drift
        return b0

    def _gauss(self, t: float, x):
        b1, b0 = self.drift
        a0 = self.sys.spec.a0
        x = np.asarray(x, dtype=float)
        if b1 == 0:
            mean, var, slope = x + b0 * t, 2 * a0 * t, 1.0
        else:
            g = math.exp(b1 * t)
            mean = x * g + b0 / b1 * math.expm1(b1 * t)
            var = a0 * math.expm1(2 * b1 * t) / b1
            slope = g
        return mean, var, slope

    def _check(self, t, n=0):
        if not t > 0:
            raise ValueError("time must be positive")
        if n > self.max_order:
            raise ValueError(f"derivative order {n} exceeds the configured maximum {self.max_order}")

    def evaluate(self, t: float, x, y):
        self._check(t)
        if self.family in ("brownian", "ou"):
            mean, var, _ = self._gauss(t, x)
            u = (np.asarray(y, dtype=float) - mean) / math.sqrt(var)
            return np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi * var)
        if self.family == "besq":
            return besq_density(self.dimension, t, x, y)
        return np.asarray(self.evaluator(t, x, y), dtype=float)

    def dx(self, n: int, t: float, x, y):
        """``n``-th derivative of the density in the starting point ``x``."""
        self._check(t, n)
        if n == 0:
            return self.evaluate(t, x, y)
        if self.family in ("brownian", "ou"):
            mean, var, slope = self._gauss(t, x)
            s = math.sqrt(var)
            u = (np.asarray(y, dtype=float) - mean) / s
            return slope ** n * s ** (-n) * _hermite_prob(n, u) * np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi * var)
        if self.family == "besq":
            return besq_density_dx(self.dimension, n, t, x, y)
        return _finite_difference(lambda z: self.evaluate(t, z, y), n, x)

    def dy(self, n: int, t: float, x, y):
        """``n``-th derivative of the density in the end point ``y``."""
        self._check(t, n)
        if n == 0:
            return self.evaluate(t, x, y)
        if self.family in ("brownian", "ou"):
            mean, var, _ = self._gauss(t, x)
            s = math.sqrt(var)
            u = (np.asarray(y, dtype=float) - mean) / s
            return (-1) ** n * s ** (-n) * _hermite_prob(n, u) * np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi * var)
        if self.family == "besq":
            return besq_density_dy(self.dimension, n, t, x, y)
        return _finite_difference(lambda z: self.evaluate(t, x, z), n, y)

    def support(self, t: float, x: float) -> tuple[float, float]:
        """Interval outside which the density is below ~1e-14 of its peak."""
        spec = self.sys.spec
        if self.family in ("brownian", "ou"):
            mean, var, _ = self._gauss(t, x)
            s = math.sqrt(var)
            return max(spec.l, float(mean) - _GAUSS_RADIUS * s), min(spec.r, float(mean) + _GAUSS_RADIUS * s)
        if self.family == "besq":
            dim = abs(self.dimension) + 4
            reach = math.sqrt(2 * t * (_TAIL_LOG + 8 + dim)) + math.sqrt(2 * t * dim)
            return 0.0, (math.sqrt(max(x, 0.0)) + reach) ** 2
        lo = spec.l if math.isfinite(spec.l) else x - 50.0
        hi = spec.r if math.isfinite(spec.r) else x + 50.0
        return lo, hi

    def scale(self, t: float, x: float) -> float:
        """Typical spatial width of the density, used to size quadrature panels."""
        if self.family in ("brownian", "ou"):
            return math.sqrt(self._gauss(t, x)[1])
        if self.family == "besq":
            return max(math.sqrt(4 * max(x, 0.0) * t + 2 * abs(self.dimension) * t * t), 0.5 * t)
        return 1.0

    def antiderivative(self, m: int, t: float, x: float, y, from_right: bool = False):
        """``m``-fold integral of ``y -> density(t, x, y)`` from ``l`` (or, with sign, from ``r``)."""
        lo, hi = self.support(t, x)
        spec = self.sys.spec
        g = lambda u: self.evaluate(t, x, u)
        if from_right:
            return iterated_integral_right(g, m, y, hi, self.scale(t, x),
                                           grade=math.isfinite(spec.r) and hi == spec.r)
        y = np.asarray(y, dtype=float)
        return iterated_integral(g, m, y, lo, self.scale(t, x),
                                 grade=math.isfinite(spec.l) and lo == spec.l)


# ------------------------------------------------------------- the model ----

@dataclass(frozen=True)
class Model:
    """A level system plus the family that supplies its densities."""

    sys: LevelSystem
    family: str
    params: dict = field(default_factory=dict, compare=False, hash=False)
    evaluator: Callable | None = field(default=None, compare=False, hash=False)

    @property
    def N(self) -> int:
        return self.sys.N

    @property
    def spec(self) -> PearsonSpec:
        return self.sys.spec

    def provider(self, k: int) -> DensityProvider:
        return DensityProvider(self.family, self.sys, k, self.params, self.evaluator)

    def with_N(self, N: int) -> "Model":
        return Model(LevelSystem(self.sys.spec, N), self.family, self.params, self.evaluator)


def brownian(N: int = 1, a0: float = 0.5, b0: float = 0.0) -> Model:
    spec = PearsonSpec(0.0, 0.0, a0, 0.0, b0)
    return Model(LevelSystem(spec, N), "brownian", {"a0": a0, "b0": b0})


def ornstein_uhlenbeck(N: int = 1, gamma: float = 1.0, a0: float = 0.5, b0: float = 0.0) -> Model:
    spec = PearsonSpec(0.0, 0.0, a0, -gamma, b0)
    return Model(LevelSystem(spec, N), "ou", {"gamma": gamma, "a0": a0, "b0": b0})


def squared_bessel(N: int = 1, theta: float = 2.0) -> Model:
    spec = PearsonSpec(0.0, 2.0, 0.0, 0.0, theta, 0.0, math.inf)
    return Model(LevelSystem(spec, N), "besq", {"theta": theta})


def custom(spec: PearsonSpec, N: int, evaluator: Callable) -> Model:
    return Model(LevelSystem(spec, N), "custom", {}, evaluator)


def model_from_config(cfg: dict) -> Model:
    """Build a :class:`Model` from the JSON family description."""
    if not isinstance(cfg, dict):
        raise ValueError("model config must be a JSON object")
    fam = cfg.get("family")
    params = dict(cfg.get("params", {}))
    N = cfg.get("N", 1)
    if not isinstance(N, int) or N < 1:
        raise ValueError("N must be a positive integer")
    if fam == "brownian":
        model = brownian(N, float(params.get("a0", 0.5)), float(params.get("b0", 0.0)))
    elif fam == "ou":
        model = ornstein_uhlenbeck(N, float(params.get("gamma", 1.0)), float(params.get("a0", 0.5)),
                                   float(params.get("b0", 0.0)))
    elif fam == "besq":
        if "theta" not in params:
            raise ValueError("besq family needs params.theta")
        model = squared_bessel(N, float(params["theta"]))
    else:
        raise ValueError(f"unsupported family {fam!r}")
    if "interval" in cfg:
        lo, hi = (_parse_endpoint(v) for v in cfg["interval"])
        if (lo, hi) != (model.spec.l, model.spec.r):
            raise ValueError(f"interval {cfg['interval']} does not match the {fam} state space")
    return model


# ----------------------------------------------------- boundary behaviour ----

def _classify_tail(log_partials: np.ndarray) -> str:
    """Decide whether a monotone sequence of partial integrals converges."""
    if not np.all(np.isfinite(log_partials[-8:])):
        return "diverges" if np.any(np.isposinf(log_partials)) else "indeterminate"
    tail = log_partials[-8:]
    inc = np.diff(tail)
    if inc[-1] < 1e-9:
        return "converges"
    ratios = inc[1:] / np.where(inc[:-1] > 0, inc[:-1], np.nan)
    if np.nanmax(ratios) < 0.9 and inc[-1] < 1e-3:
        return "converges"
    if np.nanmin(ratios) > 0.8 and tail[-1] - tail[0] > 1e-2:
        return "diverges"
    return "indeterminate"


def feller_endpoint(spec: PearsonSpec, drift: tuple[float, float], endpoint: str,
                    anchor: float | None = None) -> str:
    """Feller classification of ``l`` or ``r`` for the generator ``a d^2 + (b1 x + b0) d``.

    The scale and speed densities and the two Feller integrals are accumulated in
    log space on a logarithmic grid of distances to the endpoint; the sequence of
    partial integrals then decides convergence.
    """
    anchor = default_anchor(spec) if anchor is None else anchor
    b1, b0 = drift
    e = spec.l if endpoint == "l" else spec.r
    sgn = -1.0 if endpoint == "l" else 1.0
    ln10 = math.log(10.0)
    if math.isfinite(e):
        u = np.linspace(-math.log10(abs(anchor - e)), 300.0, 6001)
        dist = 10.0 ** (-u)
        x = e - sgn * dist
        a = spec.a(e) - sgn * spec.da(e) * dist + spec.a2 * dist * dist
        dxdu = sgn * ln10 * dist          # signed: x moves towards e as u grows
    else:
        u = np.linspace(-3.0, 100.0, 5001)
        dist = 10.0 ** u
        x = anchor + sgn * dist
        a = spec.a(x)
        dxdu = sgn * ln10 * dist
    a = np.maximum(a, np.finfo(float).tiny)
    du = u[1] - u[0]
    flux = (b1 * x + b0) / a * dxdu
    logs = -np.concatenate([[0.0], np.cumsum(0.5 * (flux[1:] + flux[:-1]) * du)])
    logm = -np.log(a) - logs
    ok = np.isfinite(logs) & (np.abs(logs) < 1e8) & np.isfinite(logm)
    cut = len(u) if ok.all() else int(np.argmin(ok))
    if cut < 200:
        return "indeterminate"
    logs, logm = logs[:cut], logm[:cut]
    logw = np.log(np.abs(dxdu[:cut]) * du)
    logS = np.logaddexp.accumulate(logs + logw)
    logM = np.logaddexp.accumulate(logm + logw)
    log_exit = np.logaddexp.accumulate(logM + logs + logw)
    log_entr = np.logaddexp.accumulate(logS + logm + logw)
    idx = np.linspace(cut // 4, cut - 1, 40).astype(int)
    exit_ = _classify_tail(log_exit[idx])
    entr = _classify_tail(log_entr[idx])
    if "indeterminate" in (exit_, entr):
        return "indeterminate"
    if exit_ == "converges" and entr == "converges":
        return "regular"
    if exit_ == "converges":
        return "exit"
    if entr == "converges":
        return "entrance"
    return "natural"


def boundary_report(sys: LevelSystem, anchor: float | None = None) -> dict:
    """Classify both endpoints for every level; flag violations of the standing assumption.

    The assumption is that each endpoint is natural or entrance on every level.
    """
    report = {"levels": {}, "violations": [], "indeterminate": []}
    for k in range(1, sys.N + 1):
        drift = sys.drift_coeffs(k)
        row = {}
        for end in ("l", "r"):
            kind = feller_endpoint(sys.spec, drift, end, anchor)
            if kind in ("natural", "entrance"):
                row[end] = kind
            elif kind == "indeterminate":
                row[end] = kind
                report["indeterminate"].append((k, end))
            else:
                row[end] = "violates-assumption"
                report["violations"].append((k, end, kind))
        report["levels"][k] = row
    return report


def normalisation(provider: DensityProvider, t: float, x: float) -> float:
    """``int density(t, x, y) dy`` by adaptive quadrature (diagnostic)."""
    lo, hi = provider.support(t, x)
    val, _ = integrate.quad(lambda y: float(provider.evaluate(t, x, y)), lo, hi,
                            points=[x] if lo < x < hi else None, limit=400,
                            epsabs=1e-13, epsrel=1e-12)
    return val
