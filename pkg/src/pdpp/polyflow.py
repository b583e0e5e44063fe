"""Polynomials and the diffusion flow ``e^{tL}`` acting on them.

The generator of a Pearson diffusion maps polynomials of degree ``M`` into
themselves, so ``e^{tL}`` is the exponential of an upper-triangular banded
matrix on the monomial basis and makes sense for either sign of ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.integrate import solve_ivp
from scipy.special import binom

from .pearson import LevelSystem

MAX_DEGREE = 64
COLLISION_GAP = 1e-8


@dataclass(frozen=True, eq=False)
class Poly:
    """Dense real polynomial; ``coeffs[i]`` multiplies ``z**i``."""

    coeffs: tuple

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1] if nz.size else np.zeros(1)
        object.__setattr__(self, "coeffs", tuple(float(v) for v in c))

    @property
    def c(self) -> np.ndarray:
        return np.array(self.coeffs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1 if any(self.coeffs) else 0

    @property
    def leading(self) -> float:
        return self.coeffs[-1]

    def __call__(self, z):
        return P.polyval(np.asarray(z, dtype=float), self.c)

    def deriv(self, m: int = 1) -> "Poly":
        return Poly(P.polyder(self.c, m)) if m <= self.degree else Poly([0.0])

    def __add__(self, other):
        return Poly(P.polyadd(self.c, _as_poly(other).c))

    __radd__ = __add__

    def __sub__(self, other):
        return Poly(P.polysub(self.c, _as_poly(other).c))

    def __rsub__(self, other):
        return _as_poly(other) - self

    def __mul__(self, other):
        if isinstance(other, Poly):
            return Poly(P.polymul(self.c, other.c))
        return Poly(self.c * float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Poly(-self.c)

    def __eq__(self, other):
        return isinstance(other, Poly) and self.coeffs == other.coeffs

    def __hash__(self):
        return hash(self.coeffs)

    def __repr__(self):
        return f"Poly({list(self.coeffs)})"

    def to_json(self) -> list:
        return list(self.coeffs)

    @classmethod
    def from_json(cls, data: Sequence[float]) -> "Poly":
        return cls(list(data))

    @classmethod
    def from_roots(cls, roots) -> "Poly":
        return cls(P.polyfromroots(roots)) if len(roots) else cls([1.0])

    @classmethod
    def monomial(cls, n: int) -> "Poly":
        c = np.zeros(n + 1)
        c[n] = 1.0
        return cls(c)


def _as_poly(p) -> Poly:
    return p if isinstance(p, Poly) else Poly([float(p)])


# ------------------------------------------------------------- the flow ----

def generator_matrix(sys: LevelSystem, k: int, M: int) -> np.ndarray:
    """Matrix of ``L^{(k)}`` on ``{1, z, ..., z^M}``; column ``i`` holds ``L z^i``."""
    if M > MAX_DEGREE:
        raise ValueError(f"degree {M} exceeds the maximum {MAX_DEGREE}")
    s = sys.spec
    b1, b0 = sys.drift_coeffs(k)
    G = np.zeros((M + 1, M + 1))
    for i in range(M + 1):
        G[i, i] = s.a2 * i * (i - 1) + b1 * i
        if i >= 1:
            G[i - 1, i] = s.a1 * i * (i - 1) + b0 * i
        if i >= 2:
            G[i - 2, i] = s.a0 * i * (i - 1)
    return G


def apply_L(sys: LevelSystem, k: int, p: Poly) -> Poly:
    return Poly(generator_matrix(sys, k, p.degree) @ p.c)


def expm_taylor(A: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a Taylor core."""
    n = A.shape[0]
    norm = np.max(np.sum(np.abs(A), axis=0)) if n else 0.0
    s = max(0, int(math.ceil(math.log2(norm / 0.25)))) if norm > 0.25 else 0
    B = A / 2.0 ** s
    E = np.eye(n)
    term = np.eye(n)
    for j in range(1, 30):
        term = term @ B / j
        E = E + term
        if np.max(np.abs(term)) <= 1e-18 * np.max(np.abs(E)):
            break
    for _ in range(s):
        E = E @ E
    return E


def flow_matrix(sys: LevelSystem, k: int, t: float, M: int) -> np.ndarray:
    return expm_taylor(t * generator_matrix(sys, k, M))


def flow(sys: LevelSystem, k: int, t: float, p: Poly) -> Poly:
    """``e^{t L^{(k)}} p`` for real ``t`` of either sign."""
    if p.degree == 0:
        return p
    return Poly(flow_matrix(sys, k, t, p.degree) @ p.c)


def leading_factor(sys: LevelSystem, k: int, t: float, M: int) -> float:
    """Growth of the leading coefficient of a degree-``M`` polynomial under the flow."""
    b1, _ = sys.drift_coeffs(k)
    return math.exp(t * M * (b1 + sys.spec.a2 * (M - 1)))


# ------------------------------------------------------ q-polynomials ----

def q_polys(x: Sequence[float], n: int) -> list[Poly]:
    """The polynomials ``q_0^{(n)}, ..., q_{n-1}^{(n)}`` attached to ``x``.

    ``q_k`` has degree ``k`` and its ``i``-th derivative at ``x_{n-i}`` equals
    ``(-1)^k`` when ``i = k`` and zero for ``i < k`` (``x`` is 1-indexed).
    """
    x = np.asarray(x, dtype=float)
    if not 1 <= n <= len(x):
        raise ValueError("level n must satisfy 1 <= n <= len(x)")
    out = []
    for k in range(n):
        c = np.zeros(k + 1)
        c[k] = (-1) ** k / math.factorial(k)
        # row i: sum_{j>=i} c_j j!/(j-i)! x_{n-i}^{j-i} = 0, solved from i = k-1 down
        for i in range(k - 1, -1, -1):
            xi = x[n - i - 1]
            acc = 0.0
            for j in range(i + 1, k + 1):
                acc += c[j] * math.perm(j, i) * xi ** (j - i)
            c[i] = -acc / math.factorial(i)
        out.append(Poly(c))
    return out


# --------------------------------------------------- divided differences ----

def divided_difference(f: Callable, points: Sequence[float], derivative: Callable | None = None,
                       max_order: int | None = None):
    """Newton divided difference ``f[x_1, ..., x_i]`` with confluent points.

    ``derivative(z, j)`` must return ``f^{(j)}(z)``; it is required whenever a
    point repeats.  ``f`` may return arrays (evaluated pointwise in the output).
    """
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("need at least one point")
    if np.any(np.diff(pts) < 0):
        raise ValueError("points must be nondecreasing")
    n = len(pts)
    # multiplicity budget
    if n > 1 and np.any(np.diff(pts) == 0):
        if derivative is None:
            raise ValueError("repeated points need a derivative callback")
        run, longest = 1, 1
        for a, b in zip(pts[:-1], pts[1:]):
            run = run + 1 if a == b else 1
            longest = max(longest, run)
        if max_order is not None and longest - 1 > max_order:
            raise ValueError("derivative order requested beyond the available budget")
    table = [f(p) for p in pts]
    for level in range(1, n):
        nxt = []
        for i in range(n - level):
            lo, hi = pts[i], pts[i + level]
            if hi == lo:
                nxt.append(derivative(lo, level) / math.factorial(level))
            else:
                nxt.append((table[i + 1] - table[i]) / (hi - lo))
        table = nxt
    return table[0]


def elementary_symmetric(x: Sequence[float], k: int) -> float:
    x = list(map(float, x))
    if not 0 <= k <= len(x):
        raise ValueError("k out of range")
    e = [1.0] + [0.0] * len(x)
    for i, xi in enumerate(x, start=1):
        for j in range(i, 0, -1):
            e[j] += xi * e[j - 1]
    return e[k]


# ------------------------------------------------- classical families ----

def hermite(n: int, z):
    """``H_n`` normalised as ``n! sum (-1)^m z^(n-2m) / (m! (n-2m)! 2^m)``."""
    z = np.asarray(z, dtype=float)
    h0, h1 = np.ones_like(z), z
    if n == 0:
        return h0
    for k in range(1, n):
        h0, h1 = h1, z * h1 - k * h0
    return h1


def laguerre(n: int, alpha: float, z):
    """Generalised Laguerre ``L_n^{(alpha)}``."""
    z = np.asarray(z, dtype=float)
    l0, l1 = np.ones_like(z), 1.0 + alpha - z
    if n == 0:
        return l0
    for k in range(1, n):
        l0, l1 = l1, ((2 * k + 1 + alpha - z) * l1 - (k + alpha) * l0) / (k + 1)
    return l1


def hermite_poly(n: int) -> Poly:
    z = Poly([0.0, 1.0])
    h0, h1 = Poly([1.0]), z
    if n == 0:
        return h0
    for k in range(1, n):
        h0, h1 = h1, z * h1 - k * h0
    return h1


def laguerre_poly(n: int, alpha: float) -> Poly:
    z = Poly([0.0, 1.0])
    l0, l1 = Poly([1.0]), Poly([1.0 + alpha, -1.0])
    if n == 0:
        return l0
    for k in range(1, n):
        l0, l1 = l1, ((2 * k + 1 + alpha) * l1 - z * l1 - (k + alpha) * l0) * (1.0 / (k + 1))
    return l1


def classical_backward_monomial(sys: LevelSystem, k: int, t: float, n: int, family: str) -> Poly:
    """Closed form of ``e^{-t L^{(k)}} z^n`` for the Brownian and squared Bessel families.

    Coefficients come straight from the explicit Hermite/Laguerre sums, which
    keeps every term positive-scaled and free of recurrence round-off.
    """
    s = sys.spec
    c = np.zeros(n + 1)
    if family == "brownian":
        if s.a2 or s.a1 or s.b1 or sys.drift_coeffs(k)[1]:
            raise ValueError("closed form needs driftless Brownian motion")
        v = 2 * s.a0 * t
        # v^{n/2} H_n(z / sqrt v)
        for m in range(n // 2 + 1):
            c[n - 2 * m] = (-1) ** m * math.factorial(n) / (
                math.factorial(m) * math.factorial(n - 2 * m) * 2 ** m) * v ** m
        return Poly(c)
    if family == "besq":
        alpha = sys.drift_coeffs(k)[1] / 2 - 1
        # n! (-2t)^n L_n^{(alpha)}(z / 2t)
        for j in range(n + 1):
            c[j] = (-1) ** (n + j) * math.factorial(n) / math.factorial(j) * binom(n + alpha, n - j) * (2 * t) ** (n - j)
        return Poly(c)
    raise ValueError(f"no classical closed form for family {family!r}")


def flow_vs_classical(sys: LevelSystem, k: int, t: float, n: int, family: str) -> dict:
    """Compare ``flow(-t, z^n)`` with the Hermite/Laguerre closed form."""
    got = flow(sys, k, -t, Poly.monomial(n)).c
    ref = classical_backward_monomial(sys, k, t, n, family).c
    size = max(len(got), len(ref))
    got, ref = np.pad(got, (0, size - len(got))), np.pad(ref, (0, size - len(ref)))
    dev = float(np.max(np.abs(got - ref)))
    return {"max_abs_deviation": dev, "max_rel_deviation": dev / float(np.max(np.abs(ref))),
            "flow": got.tolist(), "classical": ref.tolist()}


# ----------------------------------------------------------- root flow ----

class RootCollision(RuntimeError):
    pass


def real_roots(p: Poly) -> np.ndarray:
    r = P.polyroots(p.c)
    if np.any(np.abs(r.imag) > 1e-9 * np.maximum(1, np.abs(r.real))):
        raise ValueError("polynomial has non-real roots")
    return np.sort(r.real)


def root_flow(sys: LevelSystem, k: int, p: Poly, t_grid, gap: float = COLLISION_GAP,
              rtol: float = 1e-11, atol: float = 1e-12) -> np.ndarray:
    """Trajectories of the roots of ``e^{tL^{(k)}} p`` over ``t_grid``.

    Integrates ``dz_i/dt = -b(z_i) + 2 a(z_i) sum_{j != i} 1/(z_j - z_i)``.
    Returns an array of shape ``(len(t_grid), deg p)``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    z0 = real_roots(p)
    if len(z0) > 1 and np.min(np.diff(z0)) < gap:
        raise RootCollision("initial roots are not simple")
    b1, b0 = sys.drift_coeffs(k)
    spec = sys.spec

    def rhs(_, z):
        d = z[None, :] - z[:, None]
        np.fill_diagonal(d, np.inf)
        return -(b1 * z + b0) + 2 * spec.a(z) * np.sum(1.0 / d, axis=1)

    def collide(_, z):
        return np.min(np.diff(np.sort(z))) - gap if len(z) > 1 else 1.0

    collide.terminal = True
    sol = solve_ivp(rhs, (t_grid[0], t_grid[-1]), z0, method="DOP853", dense_output=True,
                    events=collide, rtol=rtol, atol=atol)
    if sol.status == 1:
        raise RootCollision(f"roots collide near t={sol.t_events[0][0]:.6g}")
    if sol.status != 0:
        # the approach speed blows up like 1/gap, so step control can give out
        # just before the gap event fires
        last = np.sort(sol.y[:, -1])
        if len(last) > 1 and np.min(np.diff(last)) < math.sqrt(gap):
            raise RootCollision(f"roots collide near t={sol.t[-1]:.6g} (step size underflow)")
        raise RuntimeError(f"root integration failed: {sol.message}")
    return sol.sol(t_grid).T
