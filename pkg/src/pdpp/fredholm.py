"""Fredholm determinants ``det(I - chi K chi)`` by block Nystrom discretisation.

Side ``"+"`` restricts index ``n_j`` to ``y > z_j`` (joint distribution function
``P(x_{n_j} <= z_j)`` for up systems); side ``"-"`` restricts to ``y < z_j``
(``P(x_{n_j} >= z_j)`` for down systems).

All indices share one set of breakpoints that contains every threshold, so the
active region of each index is a union of whole panels.  Kernels exposing a
``volterra`` order get product-integration weights for the piecewise
polynomial term ``(y1-y2)^(d-1)/(d-1)! 1(y2<y1)``, which removes the jump (for
``d = 1``) or kink from the quadrature error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from ._numerics import gauss_legendre, graded_breaks, subdivide
from .kernels import DOWN, ExtendedKernel

TAIL_TOL = 1e-13
MAX_NODES = 2048
PANEL_WIDTHS = 2.0


class NonConvergence(RuntimeError):
    """Raised when refinement hits the node cap; carries the refinement trace."""

    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Per-index Gauss-Legendre nodes on whole panels of a shared breakpoint set."""

    indices: tuple
    thresholds: tuple
    side: str
    breaks: np.ndarray
    order: int
    truncation: tuple
    active: tuple          # per index: boolean mask over panels
    nodes: tuple = field(init=False)
    weights: tuple = field(init=False)

    def __post_init__(self):
        x, w = gauss_legendre(self.order)
        a, b = self.breaks[:-1], self.breaks[1:]
        half = 0.5 * (b - a)
        all_nodes = 0.5 * (a + b)[:, None] + half[:, None] * x[None, :]
        all_weights = half[:, None] * w[None, :]
        object.__setattr__(self, "nodes", tuple(all_nodes[m].ravel() for m in self.active))
        object.__setattr__(self, "weights", tuple(all_weights[m].ravel() for m in self.active))

    @property
    def sizes(self) -> tuple:
        return tuple(len(n) for n in self.nodes)

    def refined(self, order: int) -> "QuadratureGrid":
        return QuadratureGrid(self.indices, self.thresholds, self.side, self.breaks, order,
                              self.truncation, self.active)


def _diag_tail(kernel: ExtendedKernel, idx, pts: np.ndarray) -> float:
    vals = [kernel.block(idx, np.array([p]), idx, np.array([p]))[0, 0] for p in pts]
    return float(np.max(np.abs(vals)))


def _scan_edge(kernel: ExtendedKernel, indices, edge: float, step: float, direction: int, bound: float) -> float:
    """Move ``edge`` outwards until the kernel diagonal is negligible there."""
    for _ in range(60):
        if (direction > 0 and edge >= bound) or (direction < 0 and edge <= bound):
            return bound
        probe = edge + direction * np.linspace(0.0, step, 5)
        if max(_diag_tail(kernel, i, probe) for i in indices) * step < TAIL_TOL:
            return edge
        edge += direction * step
    raise ValueError("truncation search failed to bracket the kernel tail")


def build_grid(kernel: ExtendedKernel, indices: Sequence, z: Sequence[float], side: str = "+",
               order: int = 8, truncation: tuple | None = None) -> QuadratureGrid:
    """Shared panels covering every active region ``{y > z_j}`` or ``{y < z_j}``.

    Panels are at most ``PANEL_WIDTHS * kernel.scale`` long and graded
    geometrically towards a finite boundary of the state interval.
    """
    if side not in ("+", "-"):
        raise ValueError("side must be '+' or '-'")
    indices = tuple(indices)
    z = tuple(float(v) for v in z)
    if len(z) != len(indices) or not indices:
        raise ValueError("need one threshold per index")
    if list(indices) != sorted(set(indices)):
        raise ValueError("indices must be strictly increasing")
    l, r = kernel.domain
    if any(not (l <= v <= r) for v in z):
        raise ValueError("thresholds must lie in the state interval")
    scale = kernel.scale
    if truncation is None:
        lo, hi = kernel.support
        lo = max(lo, l)
        hi = min(hi, r)
        if side == "+":
            hi = _scan_edge(kernel, indices, max(hi, max(z)), scale, +1, r)
        else:
            lo = _scan_edge(kernel, indices, min(lo, min(z)), scale, -1, l)
    else:
        lo, hi = truncation
    if side == "+":
        zc = [min(max(v, lo), hi) for v in z]
        lo = min(zc)
    else:
        zc = [min(max(v, lo), hi) for v in z]
        hi = max(zc)
    base = np.array([lo, hi, *zc])
    if math.isfinite(l) and lo == l and hi > l:
        base = np.concatenate([base, graded_breaks(l, min(hi, l + scale))])
    if math.isfinite(r) and hi == r and lo < r:
        base = np.concatenate([base, r - graded_breaks(0.0, min(r - lo, scale))])
    breaks = subdivide(base, PANEL_WIDTHS * scale)
    mid = 0.5 * (breaks[:-1] + breaks[1:])
    active = tuple((mid > zj) if side == "+" else (mid < zj) for zj in zc)
    return QuadratureGrid(indices, z, side, breaks, order, (float(lo), float(hi)), active)


@lru_cache(maxsize=256)
def _reference_volterra(m: int, d: int) -> np.ndarray:
    """``T[p, q] = int_{-1}^{xi_p} (xi_p - s)^(d-1)/(d-1)! l_q(s) ds`` on GL nodes ``xi``."""
    xi, _ = gauss_legendre(m)
    bary = np.array([1.0 / np.prod([xi[q] - xi[k] for k in range(m) if k != q]) for q in range(m)])
    T = np.empty((m, m))
    g, gw = gauss_legendre(m)
    for p in range(m):
        half = 0.5 * (xi[p] + 1.0)
        s = -1.0 + half * (g + 1.0)
        ws = half * gw * (xi[p] - s) ** (d - 1) / math.factorial(d - 1)
        diff = s[:, None] - xi[None, :]
        L = bary[None, :] / diff
        L /= L.sum(axis=1, keepdims=True)
        T[p] = ws @ L
    T.setflags(write=False)
    return T


def _volterra_weights(grid: QuadratureGrid, a: int, b: int, d: int) -> np.ndarray:
    """Product-integration matrix for ``(y1-y2)^(d-1)/(d-1)! 1(y2<y1)`` from index ``a`` to ``b``."""
    m = grid.order
    panels_a = np.flatnonzero(grid.active[a])
    panels_b = np.flatnonzero(grid.active[b])
    Ya, Yb, Wb = grid.nodes[a], grid.nodes[b], grid.weights[b]
    diff = Ya[:, None] - Yb[None, :]
    out = np.where(diff > 0, diff ** (d - 1) / math.factorial(d - 1), 0.0) * Wb[None, :]
    T = _reference_volterra(m, d)
    for ia, pa in enumerate(panels_a):
        hits = np.flatnonzero(panels_b == pa)
        if hits.size == 0:
            continue
        ib = hits[0]
        h = 0.5 * (grid.breaks[pa + 1] - grid.breaks[pa])
        out[ia * m:(ia + 1) * m, ib * m:(ib + 1) * m] = T * h ** d
    return out


def nystrom_matrix(kernel: ExtendedKernel, grid: QuadratureGrid) -> np.ndarray:
    """``W^{1/2} K W^{1/2}`` with product integration for the Volterra blocks."""
    sizes = grid.sizes
    offs = np.concatenate([[0], np.cumsum(sizes)])
    A = np.zeros((offs[-1], offs[-1]))
    sw = [np.sqrt(w) for w in grid.weights]
    for a, ia in enumerate(grid.indices):
        for b, ib in enumerate(grid.indices):
            if sizes[a] == 0 or sizes[b] == 0:
                continue
            Ya, Yb = grid.nodes[a], grid.nodes[b]
            d = kernel.volterra(ia, ib) if kernel.volterra is not None else 0
            if d:
                blk = kernel.regular(ia, Ya, ib, Yb) * grid.weights[b][None, :]
                blk = blk - _volterra_weights(grid, a, b, d)
                blk = blk * (sw[a][:, None] / sw[b][None, :])
            else:
                blk = kernel.block(ia, Ya, ib, Yb) * (sw[a][:, None] * sw[b][None, :])
            A[offs[a]:offs[a + 1], offs[b]:offs[b + 1]] = blk
    if not np.all(np.isfinite(A)):
        raise FloatingPointError("non-finite kernel value on the quadrature grid")
    return A


def fredholm_det(kernel: ExtendedKernel, grid: QuadratureGrid) -> float:
    """``det(I - chi K chi)`` on the grid, via an LU factorisation."""
    A = nystrom_matrix(kernel, grid)
    if A.size == 0:
        return 1.0
    return float(np.linalg.det(np.eye(len(A)) - A))


@dataclass
class ConvergenceReport:
    value: float
    nodes: tuple
    truncation: tuple
    trace: list

    def to_dict(self) -> dict:
        return {"value": self.value, "nodes": list(self.nodes), "truncation": list(self.truncation),
                "trace": self.trace}


def converge(kernel: ExtendedKernel, indices: Sequence, z: Sequence[float], side: str | None = None,
             tol: float = 1e-8, order: int = 8, max_nodes: int = MAX_NODES) -> tuple[float, ConvergenceReport]:
    """Double the per-panel order until successive determinants differ by less than ``tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    if side is None:
        side = "-" if kernel.side == DOWN else "+"
    grid = build_grid(kernel, indices, z, side, order)
    trace = []
    prev = None
    while True:
        value = fredholm_det(kernel, grid)
        diff = None if prev is None else abs(value - prev)
        trace.append({"order": grid.order, "nodes": list(grid.sizes), "value": value, "change": diff})
        if diff is not None and diff < tol:
            return value, ConvergenceReport(value, grid.sizes, grid.truncation, trace)
        if 2 * max(grid.sizes) > max_nodes:
            raise NonConvergence(f"no convergence to {tol:g} within {max_nodes} nodes per index", trace)
        prev = value
        grid = grid.refined(2 * grid.order)
