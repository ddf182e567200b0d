"""Euler-Maruyama integration of the N-particle step-graphon system.

Particle ``i`` (1-based) carries the label ``i/N``. Its Brownian path, its
exogenous process and its initial draw come from random streams keyed by the
reduced fraction ``i/N``, so runs with different ``N`` share noise wherever
labels coincide.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .graphon import Graphon, StepGraphon, cell_index, discretize
from .model import CoefficientModel

Array = np.ndarray

STREAM_BROWNIAN = 0
STREAM_ETA = 1
STREAM_INIT = 2

SNAPSHOT_MAGIC = b"GMF1"
_SNAPSHOT_HEADER = struct.Struct("<4sQQId")  # magic, N, k, n, T -> 32 bytes


class IntegrationDiverged(FloatingPointError):
    """Raised when a state becomes NaN or infinite."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"integration diverged at step {step}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class SimConfig:
    T: float
    k: int
    N: int
    dim: int = 1
    seed: int = 0
    replication: int = 0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if self.k < 1 or self.N < 1 or self.dim < 1:
            raise ValueError("k, N and dim must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.k

    def times(self, k: int | None = None) -> Array:
        k = self.k if k is None else k
        return np.arange(k + 1) * (self.T / k)

    def labels(self) -> Array:
        return np.arange(1, self.N + 1) / self.N

    def lineage(self) -> str:
        return f"seed={self.seed};rep={self.replication};keys=label(i/{self.N})"


def label_keys(N: int) -> list[tuple[int, int]]:
    keys = []
    for i in range(1, N + 1):
        f = Fraction(i, N)
        keys.append((f.numerator, f.denominator))
    return keys


class BrownianSource:
    """Counter-keyed normal streams derived from one master seed.

    A stream is identified by ``(kind, replication, *key)`` where ``key`` is
    any tuple of non-negative integers (typically a reduced label fraction).
    """

    def __init__(self, seed: int, replication: int = 0):
        self.seed = int(seed)
        self.replication = int(replication)

    def generator(self, kind: int, key: Sequence[int]) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(kind, self.replication, *key))
        return np.random.default_rng(ss)

    def normals(self, kind: int, keys: Iterable[Sequence[int]], shape: tuple) -> Array:
        return np.stack([self.generator(kind, key).standard_normal(shape) for key in keys])

    def increments(self, keys, k: int, T: float, n: int) -> Array:
        """Brownian increments of shape ``(len(keys), k, n)`` over the uniform k-step grid."""
        return np.sqrt(T / k) * self.normals(STREAM_BROWNIAN, keys, (k, n))

    def refined_increments(self, keys, k_list: Sequence[int], T: float, n: int) -> dict[int, Array]:
        """Increments for every ``k`` in ``k_list`` driven by one Brownian path per key.

        Only the finest level is drawn; each coarser level is obtained by
        summing consecutive increments of the next finer level in the list.
        """
        levels = sorted(set(k_list), reverse=True)
        finest = levels[0]
        for k in levels:
            if finest % k:
                raise ValueError(f"step counts {sorted(levels)} are not nested: {k} does not divide {finest}")
        out = {finest: self.increments(keys, finest, T, n)}
        for fine, coarse in zip(levels, levels[1:]):
            r = fine // coarse
            if r * coarse != fine:
                # not nested pairwise; fall back to summing the finest level
                fine, r = finest, finest // coarse
            x = out[fine]
            out[coarse] = x.reshape(x.shape[0], coarse, r, n).sum(axis=2)
        return out


@dataclass(frozen=True)
class ParticleEnsemble:
    """Simulated particle paths; ``states[m, i]`` is particle ``i+1`` at ``t_m``."""

    config: SimConfig
    states: Array
    increments: Array
    eta_trace: Array | None = None

    @property
    def times(self) -> Array:
        return self.config.times()

    @property
    def labels(self) -> Array:
        return self.config.labels()

    def paths(self) -> Array:
        """Particle paths as ``(N, k + 1, n)``."""
        return np.ascontiguousarray(self.states.transpose(1, 0, 2))

    def interpolate(self, t: float, p: float) -> Array:
        return interpolate(self, t, p)

    def to_csv(self, path) -> None:
        """Trajectory export with columns ``t,particle,component,value`` (particle 1-based)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "particle", "component", "value"])
            for m, t in enumerate(self.times):
                for i in range(self.config.N):
                    for c in range(self.config.dim):
                        writer.writerow([repr(float(t)), i + 1, c, repr(float(self.states[m, i, c]))])

    def save_snapshot(self, path) -> None:
        """Flat little-endian float64 states after a 32-byte header (magic, N, k, n, T)."""
        c = self.config
        with open(path, "wb") as fh:
            fh.write(_SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, c.N, c.k, c.dim, c.T))
            fh.write(np.ascontiguousarray(self.states, dtype="<f8").tobytes())


def load_snapshot(path) -> tuple[SimConfig, Array]:
    raw = open(path, "rb").read()
    magic, N, k, n, T = _SNAPSHOT_HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError("not a gmf snapshot")
    states = np.frombuffer(raw, dtype="<f8", offset=_SNAPSHOT_HEADER.size).reshape(k + 1, N, n)
    return SimConfig(T=T, k=k, N=N, dim=n), states.copy()


def em_step(
    states: Array,
    t: float,
    dt: float,
    model: CoefficientModel,
    weights: Array,
    noise: Array,
    eta: Array | None = None,
    step: int = 0,
) -> Array:
    """One explicit Euler-Maruyama step of the N-particle system.

    Every coefficient is evaluated at ``t`` and at the current states. ``noise``
    holds the Brownian increments over ``[t, t + dt]``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    N, n = states.shape
    if weights.shape != (N, N) or noise.shape != (N, n):
        raise ValueError("shape mismatch between states, weights and noise")
    labels = np.arange(1, N + 1) / N
    eta = np.zeros_like(states) if eta is None else eta

    # overflow is reported through IntegrationDiverged below, not as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        pair = model.F(t, labels[:, None], labels[None, :], states[None, :, :], states[:, None, :])
        coupling = np.einsum("ij,ijk->ik", weights, np.broadcast_to(pair, (N, N, n))) / N
        drift = model.G(t, labels, eta, states) + coupling
        diffusion = np.einsum("ikl,il->ik", np.broadcast_to(model.H(t, labels, eta, states), (N, n, n)), noise)
        out = states + dt * drift + diffusion
    if not np.all(np.isfinite(out)):
        raise IntegrationDiverged(step, f"non-finite state at t={t:.6g}")
    return out


def _initial_states(config: SimConfig, model: CoefficientModel, source: BrownianSource) -> Array:
    if model.init_spec is None:
        raise ValueError("model has no initial law")
    labels = config.labels()
    normals = None
    if not model.init_spec.is_deterministic:
        normals = source.normals(STREAM_INIT, label_keys(config.N), (config.dim,))
    return model.init_spec.sample(labels, normals)


def _eta_paths(config: SimConfig, model: CoefficientModel, source: BrownianSource, k: int) -> Array | None:
    if model.eta_spec.is_zero:
        return None
    normals = source.normals(STREAM_ETA, label_keys(config.N), (k + 1, config.dim))
    return model.eta_spec.sample(config.times(k), normals)


def integrate(
    config: SimConfig,
    model: CoefficientModel,
    weights: Array,
    z0: Array,
    increments: Array,
    eta: Array | None = None,
) -> Array:
    """Run ``em_step`` over the whole grid; returns states ``(k + 1, N, n)``.

    ``increments`` is ``(N, k, n)`` and ``eta`` (if any) ``(N, k + 1, n)``.
    """
    k, dt = config.k, config.dt
    states = np.empty((k + 1,) + z0.shape)
    states[0] = z0
    for m in range(k):
        eta_m = None if eta is None else eta[:, m]
        states[m + 1] = em_step(states[m], m * dt, dt, model, weights, increments[:, m], eta_m, step=m)
    return states


def _check(config: SimConfig, model: CoefficientModel):
    if model.dim != config.dim:
        raise ValueError(f"model dimension {model.dim} does not match config dim {config.dim}")


def simulate(config: SimConfig, model: CoefficientModel, graphon: Graphon | StepGraphon) -> ParticleEnsemble:
    """Simulate the N-particle system on ``discretize(graphon, N)``; deterministic given the config."""
    _check(config, model)
    sg = graphon if isinstance(graphon, StepGraphon) else discretize(graphon, config.N)
    if sg.n_blocks != config.N:
        raise ValueError("step graphon block count must equal N")
    source = BrownianSource(config.seed, config.replication)
    z0 = _initial_states(config, model, source)
    dW = source.increments(label_keys(config.N), config.k, config.T, config.dim)
    eta = _eta_paths(config, model, source, config.k)
    states = integrate(config, model, sg.weights, z0, dW, eta)
    return ParticleEnsemble(config, states, dW, None if eta is None else eta.transpose(1, 0, 2))


def refine_coupled(
    config: SimConfig,
    model: CoefficientModel,
    graphon: Graphon,
    k_list: Sequence[int],
) -> list[ParticleEnsemble]:
    """Ensembles for each step count in ``k_list`` sharing every particle's Brownian path.

    ``config.k`` is ignored. All entries must divide the largest one; the
    finest ensemble is the natural reference solution.
    """
    if not k_list:
        raise ValueError("k_list is empty")
    _check(config, model)
    sg = discretize(graphon, config.N)
    source = BrownianSource(config.seed, config.replication)
    keys = label_keys(config.N)
    dW = source.refined_increments(keys, k_list, config.T, config.dim)
    finest = max(k_list)
    eta_fine = _eta_paths(config, model, source, finest)
    z0 = _initial_states(config, model, source)

    out = []
    for k in k_list:
        cfg = SimConfig(config.T, k, config.N, config.dim, config.seed, config.replication)
        eta = None if eta_fine is None else eta_fine[:, :: finest // k]
        states = integrate(cfg, model, sg.weights, z0, dW[k], eta)
        out.append(ParticleEnsemble(cfg, states, dW[k], None if eta is None else eta.transpose(1, 0, 2)))
    return out


def interpolate(ensemble: ParticleEnsemble, t: float, p: float) -> Array:
    """Value of the particle owning label ``p`` at time ``t``, linear between grid times."""
    cfg = ensemble.config
    if not 0.0 <= t <= cfg.T:
        raise ValueError(f"time {t} outside [0, {cfg.T}]")
    i = int(cell_index(p, cfg.N))
    s = ensemble.states
    x = t / cfg.dt
    if abs(x - round(x)) < 1e-9:
        return s[int(round(x)), i].copy()
    m = min(int(np.floor(x)), cfg.k - 1)
    w = x - m
    return (1.0 - w) * s[m, i] + w * s[m + 1, i]
