"""Picard fixed-point solver for the limiting graphon mean-field laws.

The laws ``mu_{t,p}`` are represented on a grid of ``P`` midpoint labels by
``M`` sample paths each. Iteration 0 freezes every node at its initial law;
iteration ``r + 1`` re-simulates each node's decoupled SDE with the mean-field
term averaged over the frozen samples of iteration ``r``. The Brownian
increments, exogenous paths and initial draws are fixed across iterations, so
the iteration is a deterministic map.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from .graphon import Graphon
from .model import CoefficientModel
from .simulator import BrownianSource, IntegrationDiverged, SimConfig
from .transport import EmpiricalMeasure, EmpiricalPathMeasure, wasserstein_p

Array = np.ndarray

STREAM_NODE_BROWNIAN = 3
STREAM_NODE_ETA = 4
STREAM_NODE_INIT = 5


@dataclass(frozen=True)
class MeanFieldConfig:
    """``tol=None`` means ``1e-3 * (1 + spread of the initial mean field)``."""

    P: int = 32
    M: int = 200
    max_iters: int = 12
    tol: float | None = None

    def __post_init__(self):
        if self.P < 1 or self.M < 2 or self.max_iters < 1:
            raise ValueError("need P >= 1, M >= 2 and max_iters >= 1")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("picard tolerance must be positive")

    def labels(self) -> Array:
        return (np.arange(self.P) + 0.5) / self.P


@dataclass
class GridMeanField:
    """Per-node sample paths ``paths[a, m]`` of shape ``(k + 1, n)`` at label ``labels[a]``."""

    labels: Array
    times: Array
    paths: Array
    residuals: Array
    history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    tol: float = 0.0

    @property
    def P(self) -> int:
        return self.paths.shape[0]

    @property
    def M(self) -> int:
        return self.paths.shape[1]

    def node_means(self) -> Array:
        """``(P, k + 1, n)`` sample means."""
        return self.paths.mean(axis=1)

    def to_csv(self, directory) -> None:
        """Write ``node_XXX.csv`` time-T samples per node and ``summary.csv``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for a in range(self.P):
            with open(out / f"node_{a + 1:03d}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["sample", "component", "value"])
                for m in range(self.M):
                    for c in range(self.paths.shape[-1]):
                        writer.writerow([m, c, repr(float(self.paths[a, m, -1, c]))])
        with open(out / "summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node", "iterations", "residual"])
            for a in range(self.P):
                writer.writerow([a + 1, self.iterations, repr(float(self.residuals[a]))])


def node_keys(labels: Array, P: int) -> list[tuple[int, int]]:
    keys = []
    for a in range(len(labels)):
        f = Fraction(2 * a + 1, 2 * P)
        keys.append((f.numerator, f.denominator))
    return keys


def mean_field_drift(
    model: CoefficientModel,
    t: float,
    labels: Array,
    node_labels: Array,
    kernel: Array,
    frozen: Array,
    y: Array,
) -> Array:
    """``(1/P) sum_b A(p, q_b) (1/M) sum_m F(t, p, q_b, Z_bm, y)`` for each state in ``y``.

    ``kernel`` is ``A(labels, node_labels)`` with shape ``(L, P)``, ``frozen`` the
    node samples at time ``t`` with shape ``(P, M, n)`` and ``y`` is ``(L, S, n)``.
    """
    P = node_labels.size
    p = labels[:, None, None]
    q = node_labels[None, None, :]
    yy = y[:, :, None, :]
    if model.affine_in_z:
        zbar = frozen.mean(axis=1)
        pair = model.F(t, p, q, zbar[None, None], yy)
        pair = np.broadcast_to(pair, y.shape[:2] + (P, y.shape[-1]))
        return np.einsum("lb,lsbn->lsn", kernel, pair) / P
    acc = np.zeros_like(y)
    for b in range(P):
        pair = model.F(t, p, node_labels[b], frozen[b][None, None], yy)
        acc += kernel[:, b, None, None] * np.asarray(pair).mean(axis=2)
    return acc / P


def simulate_decoupled(
    model: CoefficientModel,
    labels: Array,
    times: Array,
    z0: Array,
    increments: Array,
    eta: Array | None = None,
    interaction: Callable[[int, float, Array], Array] | None = None,
) -> Array:
    """Euler-Maruyama for independent label copies with an external interaction term.

    ``z0`` is ``(L, S, n)``, ``increments`` ``(L, S, k, n)`` and ``eta``
    ``(L, S, k + 1, n)``. ``interaction(m, t, y)`` returns the mean-field drift
    at step ``m``. Returns paths ``(L, S, k + 1, n)``.
    """
    L, S, n = z0.shape
    k = increments.shape[2]
    out = np.empty((L, S, k + 1, n))
    out[:, :, 0] = z0
    p = labels[:, None]
    zero_eta = np.zeros_like(z0)
    y = z0
    for m in range(k):
        t = float(times[m])
        dt = float(times[m + 1] - times[m])
        e = zero_eta if eta is None else eta[:, :, m]
        with np.errstate(over="ignore", invalid="ignore"):
            drift = model.G(t, p, e, y)
            if interaction is not None:
                drift = drift + interaction(m, t, y)
            H = np.broadcast_to(model.H(t, p, e, y), (L, S, n, n))
            y = y + dt * drift + np.einsum("lsij,lsj->lsi", H, increments[:, :, m])
        if not np.all(np.isfinite(y)):
            raise IntegrationDiverged(m, f"mean-field node path non-finite at t={t:.6g}")
        out[:, :, m + 1] = y
    return out


def _node_noise(mf_config: MeanFieldConfig, sim_config: SimConfig, model: CoefficientModel):
    P, M, n, k = mf_config.P, mf_config.M, model.dim, sim_config.k
    labels = mf_config.labels()
    keys = node_keys(labels, P)
    source = BrownianSource(sim_config.seed, sim_config.replication)
    dW = np.sqrt(sim_config.dt) * source.normals(STREAM_NODE_BROWNIAN, keys, (M, k, n))
    init_normals = source.normals(STREAM_NODE_INIT, keys, (M, n))
    z0 = model.init_spec.sample(np.repeat(labels[:, None], M, axis=1), init_normals)
    eta = None
    if not model.eta_spec.is_zero:
        eta = model.eta_spec.sample(sim_config.times(), source.normals(STREAM_NODE_ETA, keys, (M, k + 1, n)))
    return labels, z0, dW, eta


def _node_residuals(new: Array, old: Array) -> Array:
    return np.array(
        [wasserstein_p(EmpiricalMeasure(new[a, :, -1]), EmpiricalMeasure(old[a, :, -1]), 2) for a in range(new.shape[0])]
    )


def default_tol(model: CoefficientModel, labels: Array) -> float:
    means = model.init_spec.mean(labels)
    spread = float(np.max(np.ptp(means, axis=0)))
    return 1e-3 * (1.0 + spread)


def picard_solve(
    mf_config: MeanFieldConfig,
    sim_config: SimConfig,
    model: CoefficientModel,
    graphon: Graphon,
) -> GridMeanField:
    """Approximate the graphon mean-field laws by Picard iteration on the label grid.

    Stops when the largest per-node ``W_2`` distance between consecutive
    iterates' time-``T`` marginals drops to the tolerance, or after
    ``max_iters`` iterations (then ``converged`` is False and a warning is
    issued).
    """
    if model.dim != sim_config.dim:
        raise ValueError("model dimension does not match sim config")
    labels, z0, dW, eta = _node_noise(mf_config, sim_config, model)
    times = sim_config.times()
    tol = mf_config.tol if mf_config.tol is not None else default_tol(model, labels)
    kernel = np.broadcast_to(graphon(labels[:, None], labels[None, :]), (labels.size, labels.size))

    current = np.repeat(z0[:, :, None, :], times.size, axis=2)
    history: list[float] = []
    residuals = np.full(labels.size, np.inf)
    converged = False
    for _ in range(mf_config.max_iters):
        frozen = current

        def interaction(m, t, y, frozen=frozen):
            return mean_field_drift(model, t, labels, labels, kernel, frozen[:, :, m], y)

        new = simulate_decoupled(model, labels, times, z0, dW, eta, interaction)
        residuals = _node_residuals(new, current)
        history.append(float(residuals.max()))
        current = new
        if history[-1] <= tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"Picard iteration stopped after {len(history)} iterations with residual {history[-1]:.3g} > tol {tol:.3g}",
            RuntimeWarning,
            stacklevel=2,
        )
    return GridMeanField(labels, times, current, residuals, history, len(history), converged, tol)


def frozen_paths(
    mf: GridMeanField,
    model: CoefficientModel,
    graphon: Graphon,
    labels: Array,
    z0: Array,
    increments: Array,
    eta: Array | None = None,
) -> Array:
    """Solve the limiting equation at arbitrary ``labels`` against the solver's laws.

    ``z0`` is ``(L, n)``, ``increments`` ``(L, k, n)`` and ``eta`` ``(L, k + 1, n)``;
    the mean-field term uses the frozen node samples of ``mf`` and the
    continuous graphon. Returns ``(L, k + 1, n)``.
    """
    labels = np.asarray(labels, float)
    kernel = np.broadcast_to(graphon(labels[:, None], mf.labels[None, :]), (labels.size, mf.P))

    def interaction(m, t, y):
        return mean_field_drift(model, t, labels, mf.labels, kernel, mf.paths[:, :, m], y)

    out = simulate_decoupled(
        model, labels, mf.times, z0[:, None], increments[:, None],
        None if eta is None else eta[:, None], interaction,
    )
    return out[:, 0]


def sample_mixture(mf: GridMeanField, count: int, seed: int = 0) -> EmpiricalPathMeasure:
    """Paths from the label mixture: a uniform node, then a uniform stored sample."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    nodes = rng.integers(mf.P, size=count)
    samples = rng.integers(mf.M, size=count)
    return EmpiricalPathMeasure(mf.paths[nodes, samples], mf.times)


def node_marginal(mf: GridMeanField, p: float, t: float) -> EmpiricalMeasure:
    """Samples at time ``t`` of the grid node nearest to ``p`` (ties go to the smaller label)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("label outside [0, 1]")
    hits = np.nonzero(np.abs(mf.times - t) <= 1e-9 * max(1.0, mf.times[-1]))[0]
    if hits.size == 0:
        raise ValueError(f"time {t} is not on the simulation grid")
    dist = np.abs(mf.labels - p)
    a = int(np.nonzero(dist <= dist.min() + 1e-12)[0][0])
    return EmpiricalMeasure(mf.paths[a, :, hits[0]])
