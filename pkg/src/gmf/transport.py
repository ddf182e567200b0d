"""Exact Wasserstein distances between uniform empirical measures.

With equal sample counts and uniform weights the optimal coupling is a
permutation, so every distance here is an assignment problem solved exactly.
Path measures use the sup-over-grid-times Euclidean distance as ground cost.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

Array = np.ndarray

MAX_ASSIGNMENT = 2000
MAX_BRUTE_FORCE = 7


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform empirical measure on R^n; ``points`` is ``(m, n)``."""

    points: Array

    def __post_init__(self):
        pts = np.asarray(self.points, float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a non-empty (m, n) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def mean(self) -> Array:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class EmpiricalPathMeasure:
    """Uniform empirical measure on discretised paths; ``paths`` is ``(m, k + 1, n)``."""

    paths: Array
    times: Array

    def __post_init__(self):
        paths = np.asarray(self.paths, float)
        if paths.ndim == 2:
            paths = paths[:, :, None]
        times = np.asarray(self.times, float)
        if paths.ndim != 3 or paths.shape[0] < 1:
            raise ValueError("paths must be a non-empty (m, k+1, n) array")
        if times.shape != (paths.shape[1],):
            raise ValueError("time grid does not match path length")
        if not np.all(np.isfinite(paths)):
            raise ValueError("paths must be finite")
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "times", times)

    @property
    def size(self) -> int:
        return self.paths.shape[0]

    def marginal(self, m: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.paths[:, m])

    def subsample(self, count: int, rng: np.random.Generator) -> "EmpiricalPathMeasure":
        """``count`` paths drawn without replacement."""
        if count > self.size:
            raise ValueError(f"cannot subsample {count} paths from {self.size}")
        idx = np.sort(rng.choice(self.size, size=count, replace=False))
        return EmpiricalPathMeasure(self.paths[idx], self.times)


def sup_norm_dist(x: Array, y: Array) -> float:
    """``max_t |x(t) - y(t)|`` over the shared grid."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.shape != y.shape:
        raise ValueError("paths live on different grids")
    if x.ndim == 1:
        x, y = x[:, None], y[:, None]
    d = x - y
    return float(np.sqrt(np.max((d * d).sum(axis=-1))))


def _cut_index(times: Array, t_cut: float | None) -> int:
    if t_cut is None:
        return len(times)
    hits = np.nonzero(np.isclose(times, t_cut, rtol=0.0, atol=1e-9 * max(1.0, abs(times[-1]))))[0]
    if hits.size == 0:
        raise ValueError(f"t_cut={t_cut} is not a grid time")
    return int(hits[0]) + 1


def path_cost_matrix(a: Array, b: Array) -> Array:
    """Pairwise sup-over-time Euclidean distances between ``(m, T, n)`` path arrays."""
    out = np.zeros((a.shape[0], b.shape[0]))
    # loop over time keeps memory at O(m^2); same arithmetic as sup_norm_dist
    for s in range(a.shape[1]):
        d = a[:, None, s, :] - b[None, :, s, :]
        np.maximum(out, (d * d).sum(axis=-1), out=out)
    return np.sqrt(out)


def point_cost_matrix(a: Array, b: Array) -> Array:
    d = a[:, None, :] - b[None, :, :]
    return np.sqrt((d * d).sum(axis=-1))


def _check_order(order) -> int:
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    return order


def _assignment_value(cost: Array, order: int) -> float:
    m = cost.shape[0]
    if m > MAX_ASSIGNMENT:
        raise ValueError(f"assignment size {m} exceeds guard {MAX_ASSIGNMENT}")
    c = cost**order
    # swapping the arguments transposes c; solving a canonical orientation keeps
    # near-tied assignments from depending on argument order
    t = np.ascontiguousarray(c.T)
    if t.tobytes() < c.tobytes():
        c = t
    rows, cols = linear_sum_assignment(c)
    return (math.fsum(c[rows, cols]) / m) ** (1.0 / order)


def _check_counts(m1: int, m2: int) -> None:
    if m1 != m2:
        raise ValueError(f"sample counts differ ({m1} vs {m2}); subsample to equal size first")


def wasserstein_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, order: int = 2) -> float:
    """Exact ``W_order`` between two uniform empirical measures of equal size."""
    _check_order(order)
    _check_counts(mu.size, nu.size)
    a, b = mu.points, nu.points
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch")
    if a.shape[1] == 1:
        # monotone matching is optimal for convex costs on the line
        d = np.abs(np.sort(a[:, 0]) - np.sort(b[:, 0]))
        return (math.fsum(d**order) / d.size) ** (1.0 / order)
    return _assignment_value(point_cost_matrix(a, b), order)


def wasserstein_path(
    mu: EmpiricalPathMeasure,
    nu: EmpiricalPathMeasure,
    order: int = 1,
    t_cut: float | None = None,
) -> float:
    """Exact ``W_{order, t_cut}`` on path space with the truncated sup-norm ground cost."""
    _check_order(order)
    _check_counts(mu.size, nu.size)
    if mu.times.shape != nu.times.shape or not np.allclose(mu.times, nu.times, rtol=0, atol=1e-12):
        raise ValueError("path measures live on different time grids")
    cut = _cut_index(mu.times, t_cut)
    cost = path_cost_matrix(mu.paths[:, :cut], nu.paths[:, :cut])
    return _assignment_value(cost, order)


def brute_force_ot(mu: Sequence, nu: Sequence, cost: Callable[[object, object], float]) -> float:
    """Minimum of ``mean_i cost(x_i, y_pi(i))`` over all permutations (test oracle)."""
    m = len(mu)
    _check_counts(m, len(nu))
    if m < 1:
        raise ValueError("empty measures")
    if m > MAX_BRUTE_FORCE:
        raise ValueError(f"brute force limited to {MAX_BRUTE_FORCE} points")
    table = [[cost(x, y) for y in nu] for x in mu]
    best = math.inf
    for perm in itertools.permutations(range(m)):
        best = min(best, sum(table[i][j] for i, j in enumerate(perm)))
    return best / m


def w1_to_reference(
    runs: Sequence[EmpiricalPathMeasure],
    reference: EmpiricalPathMeasure,
    seed: int = 0,
) -> Array:
    """Per-run ``W_{1,T}`` against ``reference`` subsampled to each run's size.

    Run ``r`` uses the subsample drawn from ``default_rng([seed, r])``.
    """
    out = np.empty(len(runs))
    for r, run in enumerate(runs):
        ref = reference
        if reference.size != run.size:
            ref = reference.subsample(run.size, np.random.default_rng([seed, r]))
        out[r] = wasserstein_path(run, ref, order=1)
    return out


def mean_w1_estimate(
    runs: Sequence[EmpiricalPathMeasure],
    reference: EmpiricalPathMeasure,
    seed: int = 0,
) -> tuple[float, float]:
    """Mean and standard error of ``W_{1,T}(run, reference)`` over independent runs."""
    if len(runs) < 2:
        raise ValueError("need at least two runs for a standard error")
    values = w1_to_reference(runs, reference, seed)
    return mean_and_se(values)


def mean_and_se(values) -> tuple[float, float]:
    values = np.asarray(values, float)
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))
