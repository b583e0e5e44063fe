"""Command-line front end: ``pdpp {kernel,fredholm,simulate,compare,validate}``.

Every run reads one JSON config (``--config``), optionally overridden by flags.
Exit codes: 0 success, 1 validation failure, 2 config error, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from ._numerics import composite_rule, graded_breaks, iterated_integral, subdivide
from .fredholm import NonConvergence, converge
from .kernels import (DOWN, UP, KernelConfig, kernel_frakB, kernel_frakK, kernel_K, phi, psi,
                      schutz_density, signed_density)
from .pearson import constant_c, model_from_config, stationarity_residual
from .polyflow import Poly, flow, q_polys
from .simulate import (SimConfig, SimulationError, empirical_cdf, simulate_array,
                       simulate_noncolliding, simulate_reflected)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NONCONVERGENCE = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending line when known."""


# ------------------------------------------------------------- output ----

def _fmt(v: float) -> str:
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    return format(v, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent, _level + 1) for v in obj) + f"\n{pad}]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    return json.dumps(str(obj))


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------- config ----

def _line_of(raw: str, key: str) -> int | None:
    needle = json.dumps(key)
    for n, line in enumerate(raw.splitlines(), 1):
        if needle in line:
            return n
    return None


class RunConfig:
    """Parsed JSON config with access helpers that raise line-precise errors."""

    def __init__(self, data: dict, raw: str = "", source: str = "<config>"):
        if not isinstance(data, dict):
            raise ConfigError(f"{source}: top level must be a JSON object")
        self.data, self.raw, self.source = data, raw, source

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls({}, "", "<defaults>")
        try:
            raw = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
        return cls(data, raw, path)

    def error(self, key: str, msg: str) -> ConfigError:
        line = _line_of(self.raw, key)
        where = f"{self.source}:{line}" if line else self.source
        return ConfigError(f"{where}: {key}: {msg}")

    def get(self, key: str, default=None, kind: Callable | None = None, required: bool = False):
        if key not in self.data:
            if required:
                raise self.error(key, "missing required field")
            return default
        value = self.data[key]
        if kind is None:
            return value
        try:
            return kind(value)
        except (TypeError, ValueError) as exc:
            raise self.error(key, f"invalid value {value!r} ({exc})") from None

    def model(self):
        spec = self.get("model", required=True)
        try:
            return model_from_config(spec)
        except (TypeError, ValueError) as exc:
            raise self.error("model", str(exc)) from None

    def kernel_config(self, with_time: bool = True) -> KernelConfig:
        model = self.model()
        x = self.get("x", required=True, kind=lambda v: tuple(float(a) for a in v))
        t = self.get("t", required=with_time, kind=float) if with_time else None
        side = self.get("side", UP, kind=str)
        try:
            return KernelConfig(model, x, t, side)
        except (TypeError, ValueError) as exc:
            raise self.error("x", str(exc)) from None


def _float_list(v):
    return [float(a) for a in v]


def _build_kernel(rc: RunConfig):
    name = rc.get("kernel", "frakK", kind=str)
    if name == "K":
        times = rc.get("times", required=True, kind=_float_list)
        try:
            return kernel_K(rc.kernel_config(with_time=False), times)
        except ValueError as exc:
            raise rc.error("times", str(exc)) from None
    cfg = rc.kernel_config()
    try:
        if name == "frakK":
            return kernel_frakK(cfg)
        if name == "frakB":
            return kernel_frakB(cfg)
    except ValueError as exc:
        raise rc.error("kernel", str(exc)) from None
    raise rc.error("kernel", f"unknown kernel {name!r} (expected frakK, frakB or K)")


# ----------------------------------------------------------- commands ----

def cmd_kernel(rc: RunConfig, args) -> int:
    kernel = _build_kernel(rc)
    grid = rc.get("grid", required=True)
    if not isinstance(grid, dict):
        raise rc.error("grid", "must be an object with indices and points")
    sub = RunConfig(grid, rc.raw, rc.source)
    indices = sub.get("indices", list(kernel.indices), kind=list)
    pts = sub.get("points", required=True)
    if isinstance(pts, dict):
        try:
            Y = np.linspace(float(pts["lo"]), float(pts["hi"]), int(pts["n"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise sub.error("points", f"expected lo, hi, n ({exc})") from None
    else:
        Y = sub.get("points", kind=lambda v: np.asarray(_float_list(v)))
    lines = [f"# schema_version={SCHEMA_VERSION} kernel={kernel.name}", "index1,point1,index2,point2,value"]
    for i1 in indices:
        for i2 in indices:
            block = kernel.block(i1, Y, i2, Y)
            for a, y1 in enumerate(Y):
                for b, y2 in enumerate(Y):
                    lines.append(f"{i1},{_fmt(y1)},{i2},{_fmt(y2)},{_fmt(block[a, b])}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_fredholm(rc: RunConfig, args) -> int:
    kernel = _build_kernel(rc)
    indices = rc.get("indices", list(kernel.indices), kind=list)
    z = rc.get("thresholds", required=True, kind=_float_list)
    tol = args.tol if args.tol is not None else rc.get("tol", 1e-8, kind=float)
    try:
        value, report = converge(kernel, indices, z, rc.get("grid_side"), tol)
    except NonConvergence as exc:
        _emit(dumps({"schema_version": SCHEMA_VERSION, "error": str(exc), "trace": exc.trace}) + "\n", args.out)
        return EXIT_NONCONVERGENCE
    except ValueError as exc:
        raise rc.error("thresholds", str(exc)) from None
    out = {"schema_version": SCHEMA_VERSION, "kernel": kernel.name, "indices": indices, "thresholds": z,
           "tol": tol, **report.to_dict()}
    _emit(dumps(out) + "\n", args.out)
    return EXIT_OK


def _sim_config(rc: RunConfig, args, times) -> SimConfig:
    sim = rc.get("simulation", {})
    if not isinstance(sim, dict):
        raise rc.error("simulation", "must be an object")
    sub = RunConfig(sim, rc.raw, rc.source)
    n_paths = sub.get("n_paths", 100_000, kind=int)
    if n_paths < 1:
        raise sub.error("n_paths", "must be a positive integer")
    seed = args.seed if args.seed is not None else sub.get("seed", 0, kind=int)
    try:
        return SimConfig(tuple(times), n_paths, seed, sub.get("dt", None, kind=float),
                         sub.get("scheme", "bridge", kind=str), args.threads)
    except ValueError as exc:
        raise rc.error("simulation", str(exc)) from None


def cmd_simulate(rc: RunConfig, args) -> int:
    model = rc.model()
    times = rc.get("times", required=True, kind=_float_list)
    sc = _sim_config(rc, args, times)
    system = rc.get("system", "reflected", kind=str)
    x = rc.get("x", required=True, kind=_float_list)
    try:
        if system == "reflected":
            paths = simulate_reflected(sc, rc.get("side", UP, kind=str), x, model)
        elif system == "noncolliding":
            paths = simulate_noncolliding(sc, x, model)
        elif system == "array":
            paths = simulate_array(sc, x, model)
        else:
            raise rc.error("system", f"unknown system {system!r} (expected reflected, noncolliding or array)")
    except SimulationError as exc:
        _emit(dumps({"schema_version": SCHEMA_VERSION, "error": str(exc)}) + "\n", None)
        return EXIT_FAIL
    except ValueError as exc:
        raise rc.error("x", str(exc)) from None
    summary = {"schema_version": SCHEMA_VERSION, "system": system, "n_paths": int(paths.values.shape[1]),
               "stats": paths.stats}
    if args.out:
        paths.to_csv(args.out)
        summary["csv"] = args.out
    means = paths.values.mean(axis=1)
    summary["means"] = {str(s): list(means[a]) for a, s in enumerate(paths.times)}
    sys.stdout.write(dumps(summary) + "\n")
    return EXIT_OK


SCENARIOS = {
    "brownian-up-N3": {"model": {"family": "brownian", "N": 3}, "x": [-0.5, 0.0, 0.5], "t": 1.0,
                       "side": UP, "kernel": "frakK",
                       "configs": [[[1, 2, 3], [0.2, 0.8, 1.5]], [[2, 3], [0.5, 1.0]]]},
    "brownian-down-N3": {"model": {"family": "brownian", "N": 3}, "x": [0.5, 0.0, -0.5], "t": 1.0,
                         "side": DOWN, "kernel": "frakK",
                         "configs": [[[1, 2, 3], [-0.2, -0.8, -1.5]], [[1, 3], [0.0, -1.0]]]},
    "besq-thm15-N3": {"model": {"family": "besq", "params": {"theta": 3.0}, "N": 3}, "x": [2.0, 1.0, 0.5],
                      "t": 1.0, "side": DOWN, "kernel": "frakB",
                      "configs": [[[1, 2, 3], [1.5, 1.0, 0.5]], [[2, 3], [2.0, 1.0]]]},
}


def run_scenario(name: str, n_paths: int = 100_000, seed: int = 0, z_max: float = 4.0, slack: float = 2e-3,
                 threads: int = 1, tol: float = 1e-9) -> dict:
    """Monte Carlo joint distribution functions against Fredholm determinants."""
    sc = SCENARIOS[name]
    model = model_from_config(sc["model"])
    cfg = KernelConfig(model, sc["x"], sc["t"], sc["side"])
    kernel = kernel_frakB(cfg) if sc["kernel"] == "frakB" else kernel_frakK(cfg)
    paths = simulate_reflected(SimConfig((sc["t"],), n_paths, seed, threads=threads), sc["side"], sc["x"], model)
    sample = paths.at(sc["t"])
    grid_side = "+" if sc["side"] == UP else "-"
    results = []
    for indices, z in sc["configs"]:
        value, report = converge(kernel, indices, z, tol=tol)
        p, se = empirical_cdf(sample, {n - 1: zz for n, zz in zip(indices, z)}, grid_side)
        dev = p - value
        results.append({"indices": indices, "thresholds": z, "analytic": value, "mc": p, "se": se,
                        "z": dev / se if se > 0 else (0.0 if dev == 0 else math.inf),
                        "pass": abs(dev) <= z_max * se + slack})
    return {"schema_version": SCHEMA_VERSION, "scenario": name, "n_paths": n_paths, "seed": seed,
            "z_max": z_max, "slack": slack, "results": results, "stats": paths.stats,
            "pass": all(r["pass"] for r in results)}


def cmd_compare(rc: RunConfig, args) -> int:
    name = rc.get("scenario", required=True, kind=str)
    if name not in SCENARIOS:
        raise rc.error("scenario", f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}")
    n_paths = rc.get("n_paths", 100_000, kind=int)
    if n_paths < 1:
        raise rc.error("n_paths", "must be a positive integer")
    seed = args.seed if args.seed is not None else rc.get("seed", 0, kind=int)
    try:
        report = run_scenario(name, n_paths, seed, rc.get("z_max", 4.0, kind=float),
                              rc.get("slack", 2e-3, kind=float), args.threads)
    except NonConvergence as exc:
        _emit(dumps({"schema_version": SCHEMA_VERSION, "scenario": name, "error": str(exc),
                     "trace": exc.trace}) + "\n", args.out)
        return EXIT_NONCONVERGENCE
    _emit(dumps(report) + "\n", args.out)
    return EXIT_OK if report["pass"] else EXIT_FAIL


# ------------------------------------------------------------ validate ----

def _rule(lo: float, hi: float, scale: float, graded: bool, order: int = 20):
    base = [lo, hi]
    if graded:
        base = np.concatenate([base, graded_breaks(lo, min(hi, lo + scale))])
    nodes, weights = composite_rule(subdivide(np.asarray(base), 0.5 * scale), order)
    return nodes.ravel(), weights.ravel()


def _sample_x(model, N: int, rng, side: str) -> tuple:
    if model.family == "besq":
        x = np.sort(rng.uniform(0.2, 2.5, N))
    else:
        x = np.sort(rng.uniform(-1.5, 1.5, N))
    return tuple(x if side == UP else x[::-1])


def check_semigroup(model, rng, **_) -> float:
    worst = 0.0
    for _ in range(20):
        p = Poly(rng.standard_normal(rng.integers(1, 9) + 1))
        s, t = rng.uniform(-1, 1, 2)
        k = int(rng.integers(1, model.N + 1))
        lhs = flow(model.sys, k, s, flow(model.sys, k, t, p)).c
        rhs = flow(model.sys, k, s + t, p).c
        n = max(len(lhs), len(rhs))
        diff = np.pad(lhs, (0, n - len(lhs))) - np.pad(rhs, (0, n - len(rhs)))
        worst = max(worst, float(np.max(np.abs(diff)) / max(np.max(np.abs(rhs)), 1.0)))
    return worst


def check_q_conditions(model, rng, **_) -> float:
    worst = 0.0
    for _ in range(10):
        x = _sample_x(model, model.N, rng, UP)
        for n in range(1, model.N + 1):
            for k, q in enumerate(q_polys(x, n)):
                for i in range(k + 1):
                    want = (-1) ** k if i == k else 0.0
                    worst = max(worst, abs(float(q.deriv(i)(x[n - i - 1])) - want))
    return worst


def check_biorthogonality(model, rng, t: float = 0.6, **_) -> float:
    side = DOWN if model.family == "besq" else UP
    cfg = KernelConfig(model, _sample_x(model, model.N, rng, side), t, side)
    kernel = kernel_frakK(cfg)
    lo, hi = kernel.support
    y, w = _rule(lo, hi, kernel.scale, model.family == "besq")
    worst = 0.0
    for n in range(1, model.N + 1):
        for i in range(n):
            ps = psi(cfg, n, i, y) * w
            for j in range(n):
                worst = max(worst, abs(float(ps @ phi(cfg, n, j)(y)) - (1.0 if i == j else 0.0)))
    return worst


def check_key_identity(model, rng, t: float = 0.6, c_offset: float = 0.0, **_) -> float:
    """``p_j(x, y) = -e^{-t c_j} int_l^y d_x p_{j+1}(x, u) du`` on a grid."""
    worst = 0.0
    for j in range(1, model.N):
        x = _sample_x(model, 1, rng, UP)[0]
        upper = model.provider(j + 1)
        lo, hi = upper.support(t, x)
        ys = np.linspace(lo + 0.1 * (hi - lo), lo + 0.6 * (hi - lo), 9)
        c = constant_c(model.sys, j) + c_offset
        rhs = -math.exp(-t * c) * iterated_integral(lambda u: upper.dx(1, t, x, u), 1, ys, lo,
                                                    upper.scale(t, x), grade=model.family == "besq")
        worst = max(worst, float(np.max(np.abs(model.provider(j).evaluate(t, x, ys) - rhs))))
    return worst


def check_marginalization(model, rng, t: float = 0.6, **_) -> float:
    if model.family == "besq":
        return 0.0
    m2 = model.with_N(2)
    worst = 0.0
    for side in (UP, DOWN):
        cfg = KernelConfig(m2, _sample_x(m2, 2, rng, side), t, side)
        lo, hi = kernel_frakK(cfg).support
        for a, b in [(-0.3, 0.4), (0.2, 1.1)] if side == UP else [(0.3, -0.4), (-0.2, -1.1)]:
            if side == UP:
                u, w = _rule(lo, a, 0.25, False)
                vals = [signed_density(cfg, [[a], [v, b]]) for v in u]
            else:
                u, w = _rule(a, hi, 0.25, False)
                vals = [signed_density(cfg, [[a], [b, v]]) for v in u]
            worst = max(worst, abs(float(np.dot(vals, w)) - schutz_density(cfg, side, [a, b])))
    return worst


def check_stationarity(model, rng, **_) -> float:
    spec = model.spec
    y = rng.uniform(0.1, 3.0, 20) if model.family == "besq" else rng.uniform(-2, 2, 20)
    return float(np.max(np.abs(stationarity_residual(spec, y))))


CHECKS = {
    "semigroup": (check_semigroup, 1e-9),
    "q_conditions": (check_q_conditions, 1e-10),
    "biorthogonality": (check_biorthogonality, 1e-5),
    "key_identity": (check_key_identity, 1e-6),
    "marginalization": (check_marginalization, 1e-5),
    "stationarity": (check_stationarity, 1e-8),
}


def run_validation(model_spec: dict, n_max: int, checks, seed: int = 0, c_offset: float = 0.0) -> dict:
    """Run the invariant suite for ``N = 1..n_max``; failures never stop the suite."""
    results = []
    for name in checks:
        fn, tol = CHECKS[name]
        for N in range(1, n_max + 1):
            model = model_from_config({**model_spec, "N": N})
            rng = np.random.default_rng([seed, N, list(CHECKS).index(name)])
            try:
                dev = fn(model, rng, c_offset=c_offset)
                results.append({"check": name, "N": N, "deviation": dev, "tol": tol, "pass": dev <= tol})
            except Exception as exc:  # a crashing check is a failed check
                results.append({"check": name, "N": N, "error": f"{type(exc).__name__}: {exc}", "pass": False})
    out = {"schema_version": SCHEMA_VERSION, "family": model_spec.get("family"), "n_max": n_max,
           "results": results, "pass": all(r["pass"] for r in results)}
    if not results:
        out["note"] = "no checks run"
    return out


def cmd_validate(rc: RunConfig, args) -> int:
    spec = rc.get("model", {"family": "brownian"})
    if not isinstance(spec, dict):
        raise rc.error("model", "must be an object")
    try:
        model_from_config({**spec, "N": 1})
    except (TypeError, ValueError) as exc:
        raise rc.error("model", str(exc)) from None
    n_max = rc.get("N_max", 4, kind=int)
    if n_max < 1:
        raise rc.error("N_max", "must be a positive integer")
    checks = rc.get("checks", list(CHECKS), kind=list)
    unknown = [c for c in checks if c not in CHECKS]
    if unknown:
        raise rc.error("checks", f"unknown checks {unknown}; known: {', '.join(CHECKS)}")
    hook = rc.get("test_hook", {})
    c_offset = float(hook.get("corrupt_c", 0.0)) if isinstance(hook, dict) else 0.0
    seed = args.seed if args.seed is not None else rc.get("seed", 0, kind=int)
    report = run_validation(spec, n_max, checks, seed, c_offset)
    _emit(dumps(report) + "\n", args.out)
    return EXIT_OK if report["pass"] else EXIT_FAIL


# ---------------------------------------------------------------- main ----

COMMANDS = {"kernel": cmd_kernel, "fredholm": cmd_fredholm, "simulate": cmd_simulate,
            "compare": cmd_compare, "validate": cmd_validate}


def _threads_default() -> int:
    try:
        return max(1, int(os.environ.get("PDPP_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdpp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pdpp {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--tol", type=float, help="convergence tolerance")
    common.add_argument("--threads", type=int, default=_threads_default(),
                        help="worker threads (default: $PDPP_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__ or name)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.tol is not None and not args.tol > 0:
            raise ConfigError("--tol must be positive")
        rc = RunConfig.load(args.config)
        return COMMANDS[args.command](rc, args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
