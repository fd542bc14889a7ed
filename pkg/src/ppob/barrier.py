"""One-dimensional logarithmic barrier: P(x; mu) = f(x) - mu * sum(ln c_i(x)).

The default problem is ``min x  s.t.  x - 1 >= 0, 2 - x >= 0``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ppob.errors import ConfigError, NumericFault

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_MUS = (1.0, 0.1, 0.01)


class InfeasiblePoint(ValueError):
    def __init__(self, x, index):
        super().__init__(f"x={x!r} violates constraint {index} (c_{index}(x) <= 0)")
        self.x = x
        self.index = index


@dataclass(frozen=True)
class BarrierProblem:
    f: Callable[[float], float]
    constraints: Sequence[Callable[[float], float]]
    mu: float
    domain: tuple = (1.0, 2.0)
    names: Optional[Sequence[str]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.mu < 0:
            raise ConfigError("mu", "barrier parameter must be >= 0")
        lo, hi = self.domain
        if not lo < hi:
            raise ConfigError("domain", "need lo < hi")
        xs = np.linspace(lo, hi, 1001)[1:-1]
        if not any(self.feasible(x) for x in xs):
            raise ConfigError("constraints", "no strictly feasible point found in the domain")

    def feasible(self, x) -> bool:
        return all(c(x) > 0 for c in self.constraints)

    def with_mu(self, mu) -> "BarrierProblem":
        return replace(self, mu=mu)


def default_problem(mu: float = 1.0) -> BarrierProblem:
    return BarrierProblem(lambda x: x, (lambda x: x - 1.0, lambda x: 2.0 - x), mu,
                          domain=(1.0, 2.0), names=("x", "x - 1", "2 - x"))


def eval_P(problem: BarrierProblem, x: float) -> float:
    total = problem.f(x)
    if problem.mu == 0:
        return float(total)
    for i, c in enumerate(problem.constraints):
        cx = c(x)
        if not cx > 0:
            raise InfeasiblePoint(x, i)
        total -= problem.mu * math.log(cx)
    return float(total)


@dataclass(frozen=True)
class Minimum:
    x: float
    value: float
    iterations: int


def golden_section(fn, lo: float, hi: float, tol: float = 1e-10, max_iter: int = 500) -> Minimum:
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    it = 0
    while b - a > tol and it < max_iter:
        if not (math.isfinite(fc) and math.isfinite(fd)):
            raise NumericFault(f"golden-section bracket [{a}, {b}]", "non-finite objective")
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = fn(d)
        it += 1
    x = 0.5 * (a + b)
    return Minimum(x, fn(x), it)


def minimize_P(problem: BarrierProblem, bracket: Optional[tuple] = None, tol: float = 1e-10) -> Minimum:
    """Golden-section minimizer of P on a bracket strictly inside the feasible set."""
    if bracket is None:
        lo, hi = problem.domain
        pad = 1e-12 * (hi - lo)
        bracket = (lo + pad, hi - pad)
    lo, hi = bracket
    for x in bracket:
        if not problem.feasible(x):
            raise ConfigError("bracket", f"endpoint {x!r} is not strictly feasible")
    res = golden_section(lambda x: eval_P(problem, x), lo, hi, tol)
    if not problem.feasible(res.x):
        raise NumericFault("minimize_P", "minimizer left the feasible set")
    return res


@dataclass(frozen=True)
class BarrierCurve:
    mu: float
    samples: list  # (x, P(x; mu))
    minimizer: float
    minimum: float
    iterations: int


def interior_grid(problem: BarrierProblem, n: int, margin: float = 1e-6) -> np.ndarray:
    lo, hi = problem.domain
    return np.linspace(lo + margin, hi - margin, n)


def emit_curves(problem: BarrierProblem, mus: Sequence[float] = DEFAULT_MUS, grid=201,
                out=None) -> list:
    """Sample P(x; mu) for each mu; optionally write ``x,P(x;mu1),...`` CSV to ``out``."""
    xs = interior_grid(problem, grid) if np.isscalar(grid) else np.asarray(grid, dtype=np.float64)
    curves = []
    for mu in mus:
        p = problem.with_mu(mu)
        samples = [(float(x), eval_P(p, float(x))) for x in xs]
        if not all(math.isfinite(v) for _, v in samples):
            raise NumericFault(f"mu={mu}", "non-finite P on the grid")
        m = minimize_P(p)
        curves.append(BarrierCurve(mu, samples, m.x, m.value, m.iterations))
    if out is not None:
        write_curves_csv(curves, out)
    return curves


def write_curves_csv(curves, out):
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", *[f"P(x;{c.mu:g})" for c in curves]])
        for row in zip(*[c.samples for c in curves]):
            w.writerow([repr(row[0][0]), *[repr(v) for _, v in row]])


def second_differences(values: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return v[2:] - 2.0 * v[1:-1] + v[:-2]


def is_numerically_convex(problem: BarrierProblem, grid: int = 2001, tol: float = 1e-9) -> bool:
    xs = interior_grid(problem, grid)
    return bool(np.all(second_differences([eval_P(problem, float(x)) for x in xs]) >= -tol))


def compile_expr(expr: str) -> Callable[[float], float]:
    """Turn a user expression in ``x`` (math functions allowed) into a callable."""
    names = {k: getattr(math, k) for k in dir(math) if not k.startswith("_")}
    code = compile(expr, "<expr>", "eval")
    for name in code.co_names:
        if name != "x" and name not in names:
            raise ConfigError("expression", f"unknown name {name!r} in {expr!r}")
    return lambda x: float(eval(code, {"__builtins__": {}}, {**names, "x": x}))
