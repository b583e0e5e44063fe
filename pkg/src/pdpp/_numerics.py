"""Quadrature helpers shared by the analytic modules."""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np
from numpy.polynomial.legendre import leggauss

GRADING_RATIO = 0.15
GRADING_LEVELS = 16


@lru_cache(maxsize=64)
def gauss_legendre(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    nodes, weights = leggauss(m)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def graded_breaks(lo: float, hi: float, levels: int = GRADING_LEVELS) -> np.ndarray:
    """Breakpoints clustering geometrically towards ``lo``."""
    span = hi - lo
    pts = lo + span * GRADING_RATIO ** np.arange(levels, 0, -1)
    return np.concatenate([[lo], pts, [hi]])


def subdivide(breaks: np.ndarray, max_len: float) -> np.ndarray:
    """Insert points so that no piece is longer than ``max_len``."""
    breaks = np.unique(np.asarray(breaks, dtype=float))
    out = [breaks[:1]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(np.ceil((b - a) / max_len)))
        out.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(out)


def composite_rule(breaks: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on consecutive pieces of ``breaks``."""
    x, w = gauss_legendre(m)
    a = np.asarray(breaks[:-1], dtype=float)[:, None]
    b = np.asarray(breaks[1:], dtype=float)[:, None]
    half = 0.5 * (b - a)
    nodes = (a + b) * 0.5 + half * x[None, :]
    weights = half * w[None, :]
    return nodes, weights


def iterated_integral(f, m: int, ys, lo: float, scale: float,
                      grade: bool = False, order: int = 20) -> np.ndarray:
    """Evaluate ``int_lo^y (y-u)^(m-1)/(m-1)! f(u) du`` for every ``y`` in ``ys``.

    ``f`` must accept a 2-d array of abscissae.  The integral is split at every
    requested ``y`` and at a uniform mesh of width ``scale / 2``; the running
    moments are carried from one breakpoint to the next by the binomial shift,
    so each ``y`` costs one short Gauss-Legendre panel.
    """
    if m < 1:
        raise ValueError("order of integration must be >= 1")
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    out = np.zeros_like(ys)
    active = ys > lo
    if not np.any(active):
        return out
    top = float(ys[active].max())
    if grade:
        first = min(top, lo + scale)
        base = graded_breaks(lo, first)
        base = np.concatenate([base, [top]])
    else:
        base = np.array([lo, top])
    breaks = subdivide(np.concatenate([base, ys[active]]), 0.5 * scale)
    nodes, weights = composite_rule(breaks, order)
    vals = np.asarray(f(nodes), dtype=float) * weights
    right = breaks[1:, None]
    local = np.empty((m, len(breaks) - 1))
    for j in range(m):
        local[j] = np.sum((right - nodes) ** j * vals, axis=1) / factorial(j)
    moments = np.zeros((len(breaks), m))
    cur = np.zeros(m)
    steps = np.diff(breaks)
    for p, h in enumerate(steps):
        nxt = np.empty(m)
        for j in range(m):
            acc = local[j, p]
            for r in range(j + 1):
                acc += h ** r / factorial(r) * cur[j - r]
            nxt[j] = acc
        cur = nxt
        moments[p + 1] = cur
    idx = np.searchsorted(breaks, ys[active])
    out[active] = moments[idx, m - 1]
    return out


def iterated_integral_right(f, m: int, ys, hi: float, scale: float,
                            grade: bool = False, order: int = 20) -> np.ndarray:
    """Evaluate ``-int_y^hi (y-u)^(m-1)/(m-1)! f(u) du`` (integration from the right)."""
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    mirrored = iterated_integral(lambda v: f(-v), m, -ys, -hi, scale, grade, order)
    return (-1) ** m * mirrored
