"""Benchmark fields, noisy observation, and derivative providers.

Both benchmarks live on a box in the plane and mix a linear drift with
saturating arctan wells, giving a small set of well-separated critical
points.  The first is a gradient system observed through its energy; the
second observes a non-gradient force field directly, so its Jacobian is
not symmetric and stability must be judged by eigenvalue real parts.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InputError
from .gpr import ObservationKind

__all__ = [
    "Problem",
    "observe",
    "example1_energy",
    "example1_problem",
    "example2_force",
    "example2_problem",
    "AnalyticProvider",
    "FdJacobianProvider",
    "oracle_critical_points",
]

_M1 = np.array([[0.8, -0.2], [-0.2, 0.5]])
_A2 = np.array([[0.8, -0.3], [-0.2, 0.5]])


@dataclass(eq=False)
class Problem:
    """An expensive model: an evaluator plus bookkeeping.

    evaluator(x) returns a float (ENERGY) or a (d,) force vector (FORCE).
    analytic_derivs(x), when present, returns the exact (b, J) pair used
    by reference runs and the critical-point oracle.  eval_count tracks
    every call that touched the evaluator, under a lock so concurrent
    walkers can share one budget.
    """

    name: str
    kind: ObservationKind
    dim: int
    domain: np.ndarray
    evaluator: Callable
    analytic_derivs: Optional[Callable] = None
    _count: int = field(default=0, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.domain = np.asarray(self.domain, dtype=float)
        if self.domain.shape != (self.dim, 2):
            raise InputError("domain must be a (dim, 2) array of bounds")

    @property
    def eval_count(self) -> int:
        with self._lock:
            return self._count

    def _charge(self, k: int = 1):
        with self._lock:
            self._count += k


def observe(p: Problem, x, noise_var: float, rng):
    """One true-model evaluation at x with additive Gaussian noise.

    Returns a float for ENERGY problems and a (d,) array for FORCE
    problems; increments the problem's evaluation counter either way.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (p.dim,) or not np.all(np.isfinite(x)):
        raise InputError(f"expected a finite point of dimension {p.dim}")
    if noise_var < 0:
        raise InputError("noise_var must be nonnegative")
    val = p.evaluator(x)
    p._charge()
    if p.kind is ObservationKind.ENERGY:
        val = float(val)
        if noise_var > 0:
            val += rng.normal(0.0, np.sqrt(noise_var))
        return val
    val = np.array(val, dtype=float)
    if noise_var > 0:
        val = val + rng.normal(0.0, np.sqrt(noise_var), size=p.dim)
    return val


def _gamma(x):
    return 1.0 / (1.0 + (x - 5.0) ** 2)


def example1_energy(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(0.5 * x @ _M1 @ x - 5.0 * np.sum(np.arctan(x - 5.0)))


def _example1_derivs(x):
    x = np.asarray(x, dtype=float)
    g = _gamma(x)
    grad = _M1 @ x - 5.0 * g
    hess = _M1 + np.diag(10.0 * (x - 5.0) * g * g)
    return -grad, -hess


def example1_problem() -> Problem:
    """Gradient system with three minima and two index-1 saddles."""
    return Problem(
        name="example1",
        kind=ObservationKind.ENERGY,
        dim=2,
        domain=np.array([[-1.0, 7.0], [-1.0, 7.0]]),
        evaluator=example1_energy,
        analytic_derivs=_example1_derivs,
    )


def example2_force(x):
    x = np.asarray(x, dtype=float)
    return -(_A2 @ x) + 5.0 * _gamma(x)


def _example2_derivs(x):
    x = np.asarray(x, dtype=float)
    g = _gamma(x)
    b = -(_A2 @ x) + 5.0 * g
    J = -_A2 + np.diag(-10.0 * (x - 5.0) * g * g)
    return b, J


def example2_problem() -> Problem:
    """Non-gradient force field with two stable points and one saddle."""
    return Problem(
        name="example2",
        kind=ObservationKind.FORCE,
        dim=2,
        domain=np.array([[-1.0, 8.0], [-1.0, 8.0]]),
        evaluator=example2_force,
        analytic_derivs=_example2_derivs,
    )


class AnalyticProvider:
    """Exact (b, J) straight from the problem; one evaluation per call."""

    def __init__(self, problem: Problem):
        if problem.analytic_derivs is None:
            raise InputError(f"problem {problem.name} has no analytic derivatives")
        self.problem = problem
        self.cost = 0

    def derivs(self, x):
        b, J = self.problem.analytic_derivs(np.asarray(x, dtype=float))
        self.problem._charge()
        self.cost += 1
        return b, J


class FdJacobianProvider:
    """b observed directly, J by central differences of further observations.

    Costs 1 + 2d evaluations per call.  fd_step = None uses a relative
    step of 1e-4 per coordinate; noisy problems need a much larger step
    so the difference quotient rises above the noise floor.
    """

    def __init__(self, problem: Problem, noise_var: float = 0.0, rng=None,
                 fd_step: Optional[float] = None):
        if problem.kind is not ObservationKind.FORCE:
            raise InputError("finite-difference provider expects a force problem")
        self.problem = problem
        self.noise_var = noise_var
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.fd_step = fd_step
        self.cost = 0

    def derivs(self, x):
        x = np.asarray(x, dtype=float)
        d = self.problem.dim
        b = observe(self.problem, x, self.noise_var, self.rng)
        J = np.empty((d, d))
        for j in range(d):
            h = self.fd_step
            if h is None:
                h = 1e-4 * max(1.0, abs(x[j]))
            e = np.zeros(d)
            e[j] = h
            hi = observe(self.problem, x + e, self.noise_var, self.rng)
            lo = observe(self.problem, x - e, self.noise_var, self.rng)
            J[:, j] = (hi - lo) / (2.0 * h)
        self.cost += 1 + 2 * d
        return b, J


def _fd_derivs_fn(p: Problem):
    # Fallback when a problem carries only its evaluator.
    if p.kind is ObservationKind.FORCE:
        def derivs(x):
            x = np.asarray(x, dtype=float)
            b = np.asarray(p.evaluator(x), dtype=float)
            J = np.empty((p.dim, p.dim))
            for j in range(p.dim):
                h = 1e-6 * max(1.0, abs(x[j]))
                e = np.zeros(p.dim)
                e[j] = h
                J[:, j] = (np.asarray(p.evaluator(x + e)) -
                           np.asarray(p.evaluator(x - e))) / (2.0 * h)
            return b, J
        return derivs

    def derivs(x):
        x = np.asarray(x, dtype=float)
        d = p.dim
        g = np.empty(d)
        H = np.empty((d, d))
        h = 1e-5 * np.maximum(1.0, np.abs(x))
        f0 = float(p.evaluator(x))
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = h[i]
            fp = float(p.evaluator(x + ei))
            fm = float(p.evaluator(x - ei))
            g[i] = (fp - fm) / (2.0 * h[i])
            H[i, i] = (fp - 2.0 * f0 + fm) / h[i] ** 2
        for i in range(d):
            for j in range(i + 1, d):
                ei = np.zeros(d)
                ej = np.zeros(d)
                ei[i] = h[i]
                ej[j] = h[j]
                fpp = float(p.evaluator(x + ei + ej))
                fpm = float(p.evaluator(x + ei - ej))
                fmp = float(p.evaluator(x - ei + ej))
                fmm = float(p.evaluator(x - ei - ej))
                H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
        return -g, -H

    return derivs


def oracle_critical_points(p: Problem, grid_resolution: int = 12):
    """All critical points in the domain by multi-start Newton on b = 0.

    Returns a lexicographically sorted list of (x, index) pairs where
    index counts eigenvalues of J with positive real part: 0 for stable
    points, 1 for the saddles the search dynamics targets.
    """
    if grid_resolution < 2:
        raise InputError("grid_resolution must be at least 2")
    derivs = p.analytic_derivs
    if derivs is None:
        derivs = _fd_derivs_fn(p)
    axes = [np.linspace(lo, hi, grid_resolution) for lo, hi in p.domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    seeds = np.stack([m.ravel() for m in mesh], axis=1)
    lo = p.domain[:, 0]
    hi = p.domain[:, 1]
    roots = []
    for s in seeds:
        x = s.astype(float).copy()
        for _ in range(80):
            b, J = derivs(x)
            b = np.asarray(b, dtype=float)
            if not np.all(np.isfinite(b)):
                break
            if np.max(np.abs(b)) < 1e-11:
                break
            try:
                step = np.linalg.solve(np.asarray(J, dtype=float), b)
            except np.linalg.LinAlgError:
                break
            x = x - step
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e6:
                break
        else:
            continue
        if not np.all(np.isfinite(x)):
            continue
        b, J = derivs(x)
        if np.max(np.abs(np.asarray(b))) > 1e-8:
            continue
        if np.any(x < lo - 1e-9) or np.any(x > hi + 1e-9):
            continue
        roots.append((x, np.asarray(J, dtype=float)))
    unique = []
    for x, J in roots:
        if any(np.linalg.norm(x - u[0]) < 1e-4 for u in unique):
            continue
        unique.append((x, J))
    out = []
    for x, J in unique:
        eig = np.linalg.eigvals(J)
        index = int(np.sum(eig.real > 1e-8))
        out.append((x, index))
    out.sort(key=lambda pair: tuple(pair[0]))
    return out
