"""Monte Carlo oracles for the particle systems and the interlacing array.

Randomness is drawn in fixed-size blocks of paths; block ``b`` of stream kind
``s`` uses ``Philox(SeedSequence([seed, s, b]))``.  Results therefore do not
depend on how blocks are distributed over worker threads.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .pearson import Model
from .polyflow import Poly, flow

BLOCK = 4096
MAX_HALVINGS = 10
MAX_REJECTION_RATE = 0.01
MAX_PUSH_FRACTION = 0.5
SCHEMES = ("bridge", "projection")
_MAIN, _REFILL, _START, _FREE = 0, 1, 2, 3


class SimulationError(RuntimeError):
    """Raised when a scheme diagnostic exceeds its budget."""


@dataclass(frozen=True)
class SimConfig:
    """Time grid, ensemble size, seed and reflection scheme.

    ``dt`` defaults to ``1e-3`` times the last target time.  ``scheme="bridge"``
    corrects each reflection step with the sampled minimum of the gap's
    Brownian bridge; ``"projection"`` is the plain post-step projection.
    """

    times: tuple
    n_paths: int = 100_000
    seed: int = 0
    dt: float | None = None
    scheme: str = "bridge"
    threads: int = 1

    def __post_init__(self):
        times = tuple(float(s) for s in np.atleast_1d(self.times))
        object.__setattr__(self, "times", times)
        if not times or any(s <= 0 for s in times) or list(times) != sorted(set(times)):
            raise ValueError("target times must be positive and strictly increasing")
        if int(self.n_paths) < 1:
            raise ValueError("n_paths must be at least 1")
        if self.dt is None:
            object.__setattr__(self, "dt", 1e-3 * times[-1])
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if int(self.threads) < 1:
            raise ValueError("threads must be at least 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def steps(self) -> list[tuple[int, float]]:
        """``(number of steps, step size)`` for each segment between target times."""
        out, prev = [], 0.0
        for s in self.times:
            n = max(1, math.ceil((s - prev) / self.dt - 1e-9))
            out.append((n, (s - prev) / n))
            prev = s
        return out


def block_rng(seed: int, kind: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), kind, block])))


@dataclass
class SamplePaths:
    """Configurations at the target times: ``values[time, path, coordinate]``."""

    times: tuple
    values: np.ndarray
    labels: tuple
    config: dict
    stats: dict = field(default_factory=dict)

    def at(self, s: float) -> np.ndarray:
        return self.values[self.times.index(float(s))]

    def to_csv(self, path: str | Path) -> Path:
        """Long-format CSV plus a sidecar JSON manifest with the seed provenance."""
        path = Path(path)
        T, P, D = self.values.shape
        with path.open("w") as fh:
            fh.write("# schema_version=1\npath_id,time,index,value\n")
            for a, s in enumerate(self.times):
                for p in range(P):
                    for d in range(D):
                        fh.write(f"{p},{float(s)!r},{self.labels[d]},{float(self.values[a, p, d])!r}\n")
        manifest = {"schema_version": 1, "config": self.config, "stats": self.stats,
                    "rng": {"bit_generator": "Philox", "seed_sequence": "[seed, stream, block]",
                            "block_size": BLOCK}}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return path


# ----------------------------------------------------------- shared parts ----

def _starts(x0, n: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        return np.broadcast_to(x0, (n, len(x0))).copy()
    if x0.shape[0] != n:
        raise ValueError("per-path starts must have one row per path")
    return x0.copy()


def _run_blocks(cfg: SimConfig, kind: int, n: int, fn: Callable, offset: int = 0) -> list:
    sizes = [min(BLOCK, n - s) for s in range(0, n, BLOCK)]
    starts = np.cumsum([0] + sizes[:-1])
    jobs = [(offset + b, int(s), size) for b, (s, size) in enumerate(zip(starts, sizes))]
    call = lambda job: fn(block_rng(cfg.seed, kind, job[0]), job[1], job[2])
    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            return list(pool.map(call, jobs))
    return [call(job) for job in jobs]


class _Coefficients:
    """Vectorised ``a`` and level drifts; squared Bessel uses full truncation."""

    def __init__(self, model: Model, levels: Sequence[int]):
        spec = model.spec
        self.spec = spec
        self.positive = model.family == "besq"
        d = np.array([model.sys.drift_coeffs(k) for k in levels], dtype=float)
        self.b1, self.b0 = d[:, 0], d[:, 1]

    def a(self, X):
        if self.positive:
            X = np.maximum(X, 0.0)
        return np.maximum(self.spec.a(X), 0.0)

    def step(self, X, h, rng):
        noise = rng.standard_normal(X.shape)
        Y = X + (self.b1 * X + self.b0) * h + np.sqrt(2 * self.a(X) * h) * noise
        return self.clamp(Y)

    def clamp(self, X):
        return np.maximum(X, 0.0) if self.positive else X


def _push(gap0, gap1, var, rng, scheme):
    """Amount needed to keep a gap nonnegative over one step.

    With the bridge scheme this is minus the sampled minimum of a Brownian
    bridge from ``gap0`` to ``gap1`` with variance ``var`` over the step, which
    is the exact Skorokhod push for Brownian gaps.
    """
    if scheme == "projection":
        return np.maximum(-gap1, 0.0)
    u = rng.random(gap1.shape)
    low = 0.5 * (gap0 + gap1 - np.sqrt((gap1 - gap0) ** 2 - 2 * var * np.log1p(-u)))
    return np.maximum(-low, 0.0)


# ------------------------------------------------------------ reflected ----

def simulate_reflected(cfg: SimConfig, side: str, x0, model: Model) -> SamplePaths:
    """Particles ``k = 1..N`` with level drifts; ``k`` is reflected off ``k-1`` (up or down)."""
    if side not in ("up", "down"):
        raise ValueError("side must be 'up' or 'down'")
    N = model.N
    sign = 1.0 if side == "up" else -1.0
    X0 = _starts(x0, cfg.n_paths)
    if X0.shape[1] != N:
        raise ValueError(f"initial condition must have {N} entries")
    if np.any(sign * np.diff(X0, axis=1) < 0):
        raise ValueError(f"initial condition is not in the {side} chamber")
    coef = _Coefficients(model, range(1, N + 1))

    def run(rng, start, size):
        X = X0[start:start + size].copy()
        out, pushes, total = [], 0, 0
        for n, h in cfg.steps():
            for _ in range(n):
                aold = coef.a(X)
                Y = coef.step(X, h, rng)
                for k in range(1, N):
                    gap0 = sign * (X[:, k] - X[:, k - 1])
                    gap1 = sign * (Y[:, k] - Y[:, k - 1])
                    p = _push(gap0, gap1, 2 * (aold[:, k] + aold[:, k - 1]) * h, rng, cfg.scheme)
                    Y[:, k] += sign * p
                    pushes += int(np.count_nonzero(p))
                X = Y
                total += size * max(N - 1, 1)
            out.append(X.copy())
        return np.stack(out), pushes, total

    res = _run_blocks(cfg, _MAIN, cfg.n_paths, run)
    values = np.concatenate([r[0] for r in res], axis=1)
    frac = sum(r[1] for r in res) / max(sum(r[2] for r in res), 1)
    if frac > MAX_PUSH_FRACTION:
        raise SimulationError(f"reflection active on {frac:.0%} of steps; reduce dt")
    return SamplePaths(cfg.times, values, tuple(str(k) for k in range(1, N + 1)),
                       _manifest(cfg, model, "reflected", side=side), {"push_fraction": frac})


def _manifest(cfg: SimConfig, model: Model, kind: str, **extra) -> dict:
    spec = model.spec
    return {"system": kind, "family": model.family, "params": model.params, "N": model.N,
            "spec": {k: (v if math.isfinite(v) else str(v)) for k, v in asdict(spec).items()},
            **{k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}, **extra}


# -------------------------------------------------------- non-colliding ----

def simulate_noncolliding(cfg: SimConfig, x0, model: Model) -> SamplePaths:
    """Euler scheme for the Vandermonde-conditioned system with adaptive step halving.

    A step that breaks the ordering (or leaves a finite boundary) is redone as
    two half steps with Brownian-bridge refined increments, down to
    ``dt / 2^10``; paths still failing are rejected and replaced from fresh
    streams.
    """
    N = model.N
    X0 = _starts(x0, cfg.n_paths)
    if X0.shape[1] != N or np.any(np.diff(X0, axis=1) <= 0):
        raise ValueError("start must be strictly increasing with N entries")
    spec = model.spec
    b1, b0 = model.sys.drift_coeffs(N)
    lo = spec.l

    def drift(X):
        diff = X[:, :, None] - X[:, None, :]
        np.einsum("ijj->ij", diff)[...] = np.inf
        return b1 * X + b0 + 2 * spec.a(X) * np.sum(1.0 / diff, axis=2)

    def valid(Y):
        ok = np.all(np.diff(Y, axis=1) > 0, axis=1) & np.all(np.isfinite(Y), axis=1)
        if math.isfinite(lo):
            ok &= Y[:, 0] > lo
        return ok

    def advance(X, h, dW, depth, rng):
        Y = X + drift(X) * h + np.sqrt(2 * np.maximum(spec.a(X), 0.0)) * dW
        ok = valid(Y)
        if ok.all() or depth == MAX_HALVINGS:
            return Y, ok
        bad = ~ok
        half = 0.5 * dW[bad] + math.sqrt(h / 4) * rng.standard_normal(dW[bad].shape)
        Y1, ok1 = advance(X[bad], h / 2, half, depth + 1, rng)
        Y1 = np.where(ok1[:, None], Y1, X[bad])
        Y2, ok2 = advance(Y1, h / 2, dW[bad] - half, depth + 1, rng)
        Y[bad] = Y2
        ok[bad] = ok1 & ok2
        return Y, ok

    def run_from(starts):
        def run(rng, start, size):
            X = starts[start:start + size].copy()
            alive = np.ones(size, dtype=bool)
            out = []
            for n, h in cfg.steps():
                for _ in range(n):
                    dW = math.sqrt(h) * rng.standard_normal(X.shape)
                    Y, ok = advance(X, h, dW, 0, rng)
                    alive &= ok
                    X = np.where(alive[:, None], Y, X)
                out.append(X.copy())
            return np.stack(out), alive
        return run

    res = _run_blocks(cfg, _MAIN, cfg.n_paths, run_from(X0))
    values = np.concatenate([r[0] for r in res], axis=1)
    alive = np.concatenate([r[1] for r in res])
    rejected = int(np.count_nonzero(~alive))
    values = values[:, alive]
    refills = 0
    while values.shape[1] < cfg.n_paths:
        need = cfg.n_paths - values.shape[1]
        extra = _run_blocks(cfg, _REFILL, need, run_from(X0[:need]), offset=refills)
        refills += len(extra)
        for v, a in extra:
            rejected += int(np.count_nonzero(~a))
            values = np.concatenate([values, v[:, a]], axis=1)
    values = values[:, :cfg.n_paths]
    rate = rejected / (cfg.n_paths + rejected)
    if rate > MAX_REJECTION_RATE:
        raise SimulationError(f"rejection rate {rate:.2%} exceeds {MAX_REJECTION_RATE:.0%}")
    return SamplePaths(cfg.times, values, tuple(str(k) for k in range(1, N + 1)),
                       _manifest(cfg, model, "noncolliding"), {"rejected": rejected, "rejection_rate": rate})


# --------------------------------------------------------------- arrays ----

@dataclass
class ArrayState:
    """Interlacing arrays; ``rows[k-1]`` has shape ``(samples, k)``."""

    rows: tuple

    @property
    def N(self) -> int:
        return len(self.rows)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.rows, axis=1)

    @classmethod
    def from_flat(cls, X: np.ndarray, N: int) -> "ArrayState":
        offs = np.cumsum([0] + list(range(1, N + 1)))
        return cls(tuple(X[:, offs[k]:offs[k + 1]] for k in range(N)))

    def interlaced(self) -> np.ndarray:
        """Per-sample check of ``x_i^{(k+1)} <= x_i^{(k)} <= x_{i+1}^{(k+1)}``."""
        ok = np.ones(len(self.rows[0]), dtype=bool)
        for k in range(self.N - 1):
            lower, upper = self.rows[k + 1], self.rows[k]
            ok &= np.all(lower[:, :-1] <= upper, axis=1) & np.all(upper <= lower[:, 1:], axis=1)
        return ok


def _vandermonde_rows(Y: np.ndarray) -> np.ndarray:
    out = np.ones(len(Y))
    for j in range(Y.shape[1]):
        for i in range(j):
            out *= Y[:, j] - Y[:, i]
    return out


def sample_uniform_array(top, n: int = 1, seed: int = 0, rng: np.random.Generator | None = None,
                         max_rounds: int = 10_000) -> ArrayState:
    """Uniform interlacing arrays with the given top row (one row or one per sample).

    Level ``k-1`` given level ``k`` has density proportional to ``Delta(y)`` on
    the interlacing slots; it is sampled by rejection against the bound
    ``prod_{i<j} (x_{j+1} - x_i)``.
    """
    rng = rng or block_rng(seed, _START, 0)
    X = _starts(top, n)
    if np.any(np.diff(X, axis=1) <= 0):
        raise ValueError("top row must be strictly increasing")
    rows = [X]
    cur = X
    while cur.shape[1] > 1:
        m = cur.shape[1] - 1
        left, right = cur[:, :-1], cur[:, 1:]
        bound = np.ones(n)
        for j in range(m):
            for i in range(j):
                bound *= right[:, j] - left[:, i]
        Y = np.empty((n, m))
        todo = np.arange(n)
        for _ in range(max_rounds):
            prop = left[todo] + (right[todo] - left[todo]) * rng.random((len(todo), m))
            acc = rng.random(len(todo)) * bound[todo] <= _vandermonde_rows(prop)
            Y[todo[acc]] = prop[acc]
            todo = todo[~acc]
            if todo.size == 0:
                break
        else:
            raise SimulationError("rejection budget exceeded while sampling an interlacing array")
        rows.append(Y)
        cur = Y
    return ArrayState(tuple(reversed(rows)))


def project_edges(a: ArrayState | Sequence[Sequence[float]]):
    """Right edge ``(x_1^{(1)}, ..., x_N^{(N)})`` and left edge ``(x_1^{(1)}, ..., x_1^{(N)})``."""
    if isinstance(a, ArrayState):
        up = np.stack([r[:, -1] for r in a.rows], axis=1)
        down = np.stack([r[:, 0] for r in a.rows], axis=1)
        return up, down
    return tuple(float(r[-1]) for r in a), tuple(float(r[0]) for r in a)


def simulate_array(cfg: SimConfig, top0, model: Model, start: ArrayState | None = None) -> SamplePaths:
    """Array dynamics: level ``k`` particles pushed up by ``x_{i-1}^{(k-1)}`` and down by ``x_i^{(k-1)}``.

    The start is a uniform array over ``top0`` unless given.  A within-level
    tie or inversion on levels ``2..N-1`` marks the collision time and the path
    is discarded.
    """
    N = model.N
    if start is None:
        start = sample_uniform_array(top0, cfg.n_paths, cfg.seed)
    if start.N != N or len(start.rows[0]) != cfg.n_paths:
        raise ValueError("start array does not match the model size or n_paths")
    if not start.interlaced().all():
        raise ValueError("start array is not interlaced")
    levels = [k for k in range(1, N + 1) for _ in range(k)]
    coef = _Coefficients(model, levels)
    offs = np.cumsum([0] + list(range(1, N + 1)))
    X0 = start.flat()

    def run(rng, first, size):
        X = X0[first:first + size].copy()
        alive = np.ones(size, dtype=bool)
        out = []
        for n, h in cfg.steps():
            for _ in range(n):
                aold = coef.a(X)
                Y = coef.step(X, h, rng)
                for k in range(2, N + 1):
                    for i in range(k):
                        c = offs[k - 1] + i
                        if i >= 1:  # pushed up by x_{i-1}^{(k-1)}
                            b = offs[k - 2] + i - 1
                            p = _push(X[:, c] - X[:, b], Y[:, c] - Y[:, b],
                                      2 * (aold[:, c] + aold[:, b]) * h, rng, cfg.scheme)
                            Y[:, c] += p
                        if i <= k - 2:  # pushed down by x_i^{(k-1)}
                            b = offs[k - 2] + i
                            p = _push(X[:, b] - X[:, c], Y[:, b] - Y[:, c],
                                      2 * (aold[:, c] + aold[:, b]) * h, rng, cfg.scheme)
                            Y[:, c] -= p
                for k in range(2, N):
                    row = Y[:, offs[k - 1]:offs[k]]
                    alive &= np.all(np.diff(row, axis=1) > 0, axis=1)
                X = Y
            out.append(X.copy())
        return np.stack(out), alive

    res = _run_blocks(cfg, _MAIN, cfg.n_paths, run)
    values = np.concatenate([r[0] for r in res], axis=1)
    alive = np.concatenate([r[1] for r in res])
    discarded = int(np.count_nonzero(~alive))
    rate = discarded / cfg.n_paths
    if rate > MAX_REJECTION_RATE:
        raise SimulationError(f"collision discard rate {rate:.2%} exceeds {MAX_REJECTION_RATE:.0%}")
    labels = tuple(f"{k}.{i}" for k in range(1, N + 1) for i in range(1, k + 1))
    return SamplePaths(cfg.times, values[:, alive], labels, _manifest(cfg, model, "array"),
                       {"discarded": discarded, "discard_rate": rate})


# ------------------------------------------------------------ estimators ----

def _nonempty(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty sample")
    return samples


def empirical_cdf(samples, thresholds, side: str = "+") -> tuple[float, float]:
    """Joint probability with standard error.

    ``samples`` has shape ``(paths, coords)``; ``thresholds`` maps coordinate
    index to level.  Side ``"+"`` estimates ``P(X_c <= z_c)`` for all listed
    coordinates, side ``"-"`` estimates ``P(X_c >= z_c)``.
    """
    samples = _nonempty(samples)
    if samples.ndim == 1:
        samples = samples[:, None]
    hit = np.ones(len(samples), dtype=bool)
    for c, z in dict(thresholds).items():
        hit &= samples[:, c] <= z if side == "+" else samples[:, c] >= z
    p = float(hit.mean())
    return p, math.sqrt(max(p * (1 - p), 0.0) / len(samples))


def hist_density(samples, bins) -> tuple[np.ndarray, np.ndarray]:
    """One-point density from per-path particle counts, with per-bin standard errors.

    ``samples`` has shape ``(paths, particles)``; every particle of a path
    counts, so the density integrates to the particle number.
    """
    samples = _nonempty(samples)
    if samples.ndim == 1:
        samples = samples[:, None]
    bins = np.asarray(bins, dtype=float)
    width = np.diff(bins)
    idx = np.searchsorted(bins, samples, side="right") - 1
    counts = np.zeros((len(samples), len(width)))
    for c in range(samples.shape[1]):
        ok = (idx[:, c] >= 0) & (idx[:, c] < len(width))
        np.add.at(counts, (np.flatnonzero(ok), idx[ok, c]), 1.0)
    mean = counts.mean(axis=0) / width
    se = counts.std(axis=0, ddof=1) / math.sqrt(len(samples)) / width if len(samples) > 1 else np.zeros_like(mean)
    return mean, se


def ks_distance(s1, s2) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    s1, s2 = _nonempty(s1).ravel(), _nonempty(s2).ravel()
    return float(stats.ks_2samp(s1, s2).statistic)


def ks_critical(n: int, m: int, alpha: float = 0.01) -> float:
    """Asymptotic two-sample critical value ``c(alpha) sqrt((n+m)/(nm))``."""
    c = math.sqrt(-0.5 * math.log(alpha / 2))
    return c * math.sqrt((n + m) / (n * m))


def sample_free(model: Model, k: int, t: float, x0: float, n: int, rng: np.random.Generator,
                dt: float | None = None) -> np.ndarray:
    """Samples of the level-``k`` diffusion at time ``t``.

    Gaussian families and squared Bessel are sampled exactly (the latter as a
    scaled noncentral chi-square); other families use Euler steps of size ``dt``.
    """
    prov = model.provider(k)
    if model.family in ("brownian", "ou"):
        mean, var, _ = prov._gauss(t, x0)
        return float(mean) + math.sqrt(var) * rng.standard_normal(n)
    if model.family == "besq":
        dim = prov.dimension
        if x0 == 0:
            return t * rng.chisquare(dim, n)
        return t * rng.noncentral_chisquare(dim, x0 / t, n)
    coef = _Coefficients(model.with_N(model.N), [k])
    steps = max(1, math.ceil(t / (dt or 1e-3 * t)))
    X = np.full((n, 1), float(x0))
    for _ in range(steps):
        X = coef.step(X, t / steps, rng)
    return X[:, 0]


def martingale_check(model: Model, k: int, p: Poly, t: float, cfg: SimConfig, x0: float) -> tuple[float, float]:
    """MC mean and standard error of ``[flow(-t, p)](X_t)`` for the level-``k`` diffusion from ``x0``."""
    q = flow(model.sys, k, -t, p)
    parts = _run_blocks(cfg, _FREE, cfg.n_paths,
                        lambda rng, s, size: q(sample_free(model, k, t, x0, size, rng, cfg.dt)))
    vals = np.concatenate(parts)
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(vals.mean()), se
