"""Experiment runners and the CSV artifact writer behind ``gmf run``.

Every runner takes an :class:`ExperimentConfig` and returns a
:class:`SweepResult`. Sweep cells may run in a thread pool; rows are always
collected in cell order so the CSV does not depend on scheduling.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy

from . import __version__
from .graphon import GRAPHONS, make_graphon
from .meanfield import MeanFieldConfig, frozen_paths, picard_solve, sample_mixture
from .model import PRESETS, global_minimizer, make_model, midpoint_labels, quadratic_costs
from .simulator import IntegrationDiverged, SimConfig, integrate, refine_coupled, simulate
from .transport import (
    EmpiricalMeasure,
    EmpiricalPathMeasure,
    brute_force_ot,
    mean_and_se,
    sup_norm_dist,
    wasserstein_p,
    wasserstein_path,
)

EXPERIMENTS = ("lln_n_sweep", "lln_k_sweep", "sgd_demo", "ot_selftest", "em_order")
REQUIRED_KEYS = ("experiment", "N", "k", "T", "replications", "seed", "out_dir")
OPTIONAL_KEYS = ("model", "graphon", "meanfield")
HEADER = ["experiment", "N", "k", "replication", "metric", "value", "std_error", "wall_time_ms", "seed_lineage"]

DEFAULT_MODEL = {"em_order": "ou_scalar", "sgd_demo": "sgd_quadratic"}

# stream kind for the exact OU oracle; particle and node streams use 0..5
STREAM_OU_ORACLE = 6


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    N: tuple[int, ...]
    k: tuple[int, ...]
    T: float
    replications: int
    seed: int
    out_dir: str
    model: dict = field(default_factory=dict)
    graphon: dict = field(default_factory=dict)
    meanfield: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: Any) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(raw) - set(REQUIRED_KEYS) - set(OPTIONAL_KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        missing = [key for key in REQUIRED_KEYS if key not in raw]
        if missing:
            raise ConfigError(f"missing config keys: {missing}")

        experiment = raw["experiment"]
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {list(EXPERIMENTS)}, got {experiment!r}")
        N = _int_list(raw["N"], "N")
        k = _int_list(raw["k"], "k")
        T = raw["T"]
        if isinstance(T, bool) or not isinstance(T, (int, float)) or not T > 0 or not math.isfinite(T):
            raise ConfigError("T must be a positive number")
        reps = _int(raw["replications"], "replications", 1)
        seed = _int(raw["seed"], "seed", 0)
        out_dir = raw["out_dir"]
        if not isinstance(out_dir, str) or not out_dir:
            raise ConfigError("out_dir must be a non-empty string")

        model = _named(raw.get("model", {"name": DEFAULT_MODEL.get(experiment, "consensus_only")}), "model")
        graphon = _named(raw.get("graphon", {"name": "constant", "params": {"c": 1.0}}), "graphon")
        meanfield = raw.get("meanfield", {})
        if not isinstance(meanfield, dict):
            raise ConfigError("meanfield must be an object")
        bad = sorted(set(meanfield) - {"P", "M", "max_iters", "tol"})
        if bad:
            raise ConfigError(f"unknown meanfield keys: {bad}")

        cfg = cls(experiment, N, k, float(T), reps, seed, out_dir, model, graphon, dict(meanfield))
        cfg._validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def _validate(self) -> None:
        if self.model["name"] not in PRESETS:
            raise ConfigError(f"unknown model preset {self.model['name']!r}; choose from {sorted(PRESETS)}")
        if self.graphon["name"] not in GRAPHONS:
            raise ConfigError(f"unknown graphon {self.graphon['name']!r}; choose from {sorted(GRAPHONS)}")
        try:
            self.build_model()
            self.build_graphon()
            self.meanfield_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if self.experiment == "em_order" and self.model["name"] != "ou_scalar":
            raise ConfigError("em_order needs the ou_scalar model")
        if self.experiment == "sgd_demo" and self.model["name"] != "sgd_quadratic":
            raise ConfigError("sgd_demo needs the sgd_quadratic model")
        if self.experiment in ("lln_k_sweep", "em_order"):
            finest = max(self.k)
            if any(finest % k for k in self.k):
                raise ConfigError(f"k list {list(self.k)} is not nested: every entry must divide {finest}")

    def build_model(self):
        return make_model(self.model["name"], self.model.get("params", {}))

    def build_graphon(self):
        return make_graphon(self.graphon["name"], self.graphon.get("params", {}))

    def meanfield_config(self) -> MeanFieldConfig:
        return MeanFieldConfig(**self.meanfield)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["N"], out["k"] = list(self.N), list(self.k)
        return out


def _int(value, name: str, low: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < low:
        raise ConfigError(f"{name} must be an integer >= {low}")
    return value


def _int_list(value, name: str) -> tuple[int, ...]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{name} must be a non-empty list")
    return tuple(_int(v, name, 1) for v in value)


def _named(value, name: str) -> dict:
    if not isinstance(value, dict) or "name" not in value or set(value) - {"name", "params"}:
        raise ConfigError(f"{name} must be an object with keys name and params")
    params = value.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{name}.params must be an object")
    return {"name": value["name"], "params": dict(params)}


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class Row:
    experiment: str
    N: int | str
    k: int | str
    replication: int | str
    metric: str
    value: float
    std_error: float | str = ""
    wall_time_ms: float = 0.0
    seed_lineage: str = ""

    def cells(self) -> list[str]:
        return [
            self.experiment,
            str(self.N),
            str(self.k),
            str(self.replication),
            self.metric,
            _fmt(self.value),
            "" if self.std_error == "" else _fmt(self.std_error),
            f"{self.wall_time_ms:.3f}",
            self.seed_lineage,
        ]


def _fmt(x) -> str:
    return repr(float(x))


@dataclass
class SweepResult:
    experiment: str
    rows: list[Row] = field(default_factory=list)
    cells: int = 0
    diverged_cells: int = 0
    failed_cells: int = 0

    @property
    def all_diverged(self) -> bool:
        return self.cells > 0 and self.diverged_cells == self.cells

    def find(self, metric: str, N=None, k=None, replication="all") -> list[Row]:
        return [
            r for r in self.rows
            if r.metric == metric
            and (N is None or r.N == N)
            and (k is None or r.k == k)
            and (replication is None or r.replication == replication)
        ]

    def value(self, metric: str, N=None, k=None, replication="all") -> float:
        rows = self.find(metric, N, k, replication)
        if len(rows) != 1:
            raise KeyError(f"expected one row for {metric} N={N} k={k} rep={replication}, found {len(rows)}")
        return rows[0].value

    def std_error(self, metric: str, N=None, k=None) -> float:
        rows = self.find(metric, N, k, "all")
        if len(rows) != 1:
            raise KeyError(metric)
        return float(rows[0].std_error)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(HEADER)
            for row in self.rows:
                writer.writerow(row.cells())


def write_manifest(cfg: ExperimentConfig, path) -> None:
    lines = [
        "gmf experiment manifest",
        f"gmf {__version__}",
        f"python {platform.python_version()}",
        f"numpy {np.__version__}",
        f"scipy {scipy.__version__}",
        "config:",
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True),
        "",
    ]
    Path(path).write_text("\n".join(lines))


# ---------------------------------------------------------------------------
# cell execution


Cell = Callable[[], list[Row]]


@dataclass
class _CellSpec:
    N: int | str
    k: int | str
    lineage: str
    run: Cell


def _run_cells(experiment: str, specs: list[_CellSpec], workers: int = 1) -> SweepResult:
    def guarded(spec: _CellSpec):
        start = time.perf_counter()
        try:
            return spec.run(), None
        except (FloatingPointError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            ms = 1e3 * (time.perf_counter() - start)
            lineage = f"{spec.lineage};msg={exc}"
            return [Row(experiment, spec.N, spec.k, "all", f"error:{type(exc).__name__}", math.nan, "", ms, lineage)], exc

    if workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(guarded, specs))
    else:
        outcomes = [guarded(spec) for spec in specs]

    result = SweepResult(experiment, cells=len(specs))
    for rows, exc in outcomes:
        result.rows.extend(rows)
        if exc is not None:
            result.failed_cells += 1
            if isinstance(exc, IntegrationDiverged):
                result.diverged_cells += 1
    return result


def _summary(experiment, N, k, metric, values, ms, lineage) -> Row:
    mean, se = mean_and_se(values)
    return Row(experiment, N, k, "all", metric, mean, se, ms, lineage)


def _slope_row(experiment, N, dts, errors, metric, lineage) -> Row:
    dts, errors = np.asarray(dts, float), np.asarray(errors, float)
    if np.unique(dts).size < 2 or np.any(errors <= 0) or not np.all(np.isfinite(errors)):
        return Row(experiment, N, "", "all", f"{metric}_unavailable", math.nan, "", 0.0,
                   f"{lineage};reason=need two step sizes with positive error")
    slope = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    return Row(experiment, N, "", "all", metric, slope, "", 0.0, lineage)


def _ms(t0: float) -> float:
    return 1e3 * (time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# runners


def run_lln_n_sweep(cfg: ExperimentConfig, workers: int = 1) -> SweepResult:
    """W_{1,T} and (for deterministic data) mean-square distance to the mean-field reference."""
    model, graphon = cfg.build_model(), cfg.build_graphon()
    kmax = max(cfg.k)
    mf_cfg = cfg.meanfield_config()
    deterministic_data = model.init_spec.is_deterministic and model.eta_spec.is_zero
    ref_lineage = f"seed={cfg.seed};meanfield;P={mf_cfg.P};M={mf_cfg.M};mixture_seed={cfg.seed}"
    name = cfg.experiment

    t0 = time.perf_counter()
    try:
        mf = picard_solve(mf_cfg, SimConfig(cfg.T, kmax, 1, model.dim, cfg.seed), model, graphon)
    except IntegrationDiverged as exc:
        result = SweepResult(name, cells=len(cfg.N), diverged_cells=len(cfg.N), failed_cells=len(cfg.N))
        for N in cfg.N:
            result.rows.append(Row(name, N, kmax, "all", "error:IntegrationDiverged", math.nan, "", _ms(t0),
                                   f"{ref_lineage};msg={exc}"))
        return result
    reference = sample_mixture(mf, 4 * max(cfg.N), cfg.seed)
    head = [
        Row(name, "", kmax, "all", "picard_iterations", float(mf.iterations), "", _ms(t0), ref_lineage),
        Row(name, "", kmax, "all", "picard_residual", mf.history[-1], "", 0.0, ref_lineage),
    ]

    def cell(N: int) -> list[Row]:
        rows, w1, ms = [], [], []
        cell_start = time.perf_counter()
        for r in range(cfg.replications):
            t1 = time.perf_counter()
            sim = SimConfig(cfg.T, kmax, N, model.dim, cfg.seed, r)
            ens = simulate(sim, model, graphon)
            run = EmpiricalPathMeasure(ens.paths(), ens.times)
            ref = reference.subsample(N, np.random.default_rng([cfg.seed, N, r]))
            w1.append(wasserstein_path(run, ref, order=1))
            lineage = f"{sim.lineage()};subsample=[{cfg.seed},{N},{r}]"
            rows.append(Row(name, N, kmax, r, "w1_path", w1[-1], "", _ms(t1), lineage))
            if deterministic_data:
                t2 = time.perf_counter()
                limit = frozen_paths(mf, model, graphon, ens.labels, ens.states[0], ens.increments)
                diff = ens.paths() - limit
                ms.append(float(np.mean(np.max((diff * diff).sum(axis=-1), axis=1))))
                rows.append(Row(name, N, kmax, r, "ms_sup", ms[-1], "", _ms(t2), sim.lineage()))
        lineage = f"seed={cfg.seed};reps=0..{cfg.replications - 1};keys=label(i/{N})"
        rows.append(_summary(name, N, kmax, "w1_path", w1, _ms(cell_start), lineage))
        if ms:
            rows.append(_summary(name, N, kmax, "ms_sup", ms, 0.0, lineage))
        return rows

    specs = [_CellSpec(N, kmax, f"seed={cfg.seed};N={N}", lambda N=N: cell(N)) for N in cfg.N]
    result = _run_cells(name, specs, workers)
    result.rows[:0] = head
    return result


def run_lln_k_sweep(cfg: ExperimentConfig, workers: int = 1) -> SweepResult:
    """Coupled-refinement time-discretisation error against the finest ``k``."""
    model, graphon = cfg.build_model(), cfg.build_graphon()
    finest = max(cfg.k)
    coarse = list(cfg.k)
    coarse.remove(finest)
    name = cfg.experiment

    def cell(N: int) -> list[Row]:
        rows = []
        per_k: dict[int, list[float]] = {k: [] for k in coarse}
        cell_start = time.perf_counter()
        for r in range(cfg.replications):
            t1 = time.perf_counter()
            sim = SimConfig(cfg.T, finest, N, model.dim, cfg.seed, r)
            ensembles = refine_coupled(sim, model, graphon, [finest] + coarse)
            ref = ensembles[0].states
            for k, ens in zip(coarse, ensembles[1:]):
                diff = ens.states - ref[:: finest // k]
                per_k[k].append(float(np.mean(np.max((diff * diff).sum(axis=-1), axis=0))))
            ms = _ms(t1)
            for k in coarse:
                rows.append(Row(name, N, k, r, "ms_sup_time", per_k[k][-1], "", ms,
                                f"{sim.lineage()};refined_from=k{finest}"))
        lineage = f"seed={cfg.seed};reps=0..{cfg.replications - 1};keys=label(i/{N});refined_from=k{finest}"
        wall = _ms(cell_start)
        for k in coarse:
            rows.append(_summary(name, N, k, "ms_sup_time", per_k[k], wall, lineage))
        levels = sorted(set(coarse))
        dts = [cfg.T / k for k in levels]
        rms = [math.sqrt(np.mean(per_k[k])) for k in levels]
        rows.append(_slope_row(name, N, dts, rms, "rms_order", lineage))
        return rows

    specs = [_CellSpec(N, "", f"seed={cfg.seed};N={N}", lambda N=N: cell(N)) for N in cfg.N]
    return _run_cells(name, specs, workers)


def _report_indices(k: int, most: int = 10) -> list[int]:
    """Evenly spaced grid indices including 0 and k; the spacing divides k."""
    count = max(c for c in range(1, most + 1) if k % c == 0)
    return list(range(0, k + 1, k // count))


def run_sgd_demo(cfg: ExperimentConfig, workers: int = 1) -> SweepResult:
    """Particle-mean distance to the global minimiser and disagreement over time."""
    model, graphon = cfg.build_model(), cfg.build_graphon()
    params = cfg.model.get("params", {})
    dim = model.dim
    costs = quadratic_costs(dim, params.get("target", "label"), params.get("weight", "identity"))
    z_star = global_minimizer(costs, midpoint_labels(1000))
    kmax = max(cfg.k)
    name = cfg.experiment
    head = [Row(name, "", "", "all", f"z_star[{c}]", float(z_star[c]), "", 0.0, "grid=midpoint(1000)")
            for c in range(dim)]

    def cell(N: int) -> list[Row]:
        rows = []
        sim0 = SimConfig(cfg.T, kmax, N, dim, cfg.seed)
        idx = _report_indices(kmax)
        times = sim0.times()
        dist = np.empty((cfg.replications, len(idx)))
        spread = np.empty_like(dist)
        finals = np.empty((cfg.replications, dim))
        cell_start = time.perf_counter()
        for r in range(cfg.replications):
            t1 = time.perf_counter()
            sim = SimConfig(cfg.T, kmax, N, dim, cfg.seed, r)
            states = simulate(sim, model, graphon).states[idx]
            mean = states.mean(axis=1)
            dist[r] = np.linalg.norm(mean - z_star, axis=-1)
            spread[r] = np.sqrt(((states - mean[:, None]) ** 2).sum(axis=-1).mean(axis=1))
            finals[r] = mean[-1]
            ms = _ms(t1)
            for j, m in enumerate(idx):
                rows.append(Row(name, N, kmax, r, f"mean_to_opt@t={times[m]:g}", dist[r, j], "", ms, sim.lineage()))
                rows.append(Row(name, N, kmax, r, f"disagreement@t={times[m]:g}", spread[r, j], "", ms, sim.lineage()))
        lineage = f"seed={cfg.seed};reps=0..{cfg.replications - 1};keys=label(i/{N})"
        wall = _ms(cell_start)
        for j, m in enumerate(idx):
            rows.append(_summary(name, N, kmax, f"mean_to_opt@t={times[m]:g}", dist[:, j], wall, lineage))
            rows.append(_summary(name, N, kmax, f"disagreement@t={times[m]:g}", spread[:, j], wall, lineage))
        rows.append(_summary(name, N, kmax, "final_mean_to_opt", dist[:, -1], wall, lineage))
        avg = finals.mean(axis=0)
        se = finals.std(axis=0, ddof=1) / math.sqrt(cfg.replications) if cfg.replications > 1 else np.zeros(dim)
        rows.append(Row(name, N, kmax, "all", "replication_mean_to_opt", float(np.linalg.norm(avg - z_star)),
                        float(np.linalg.norm(se)), wall, lineage))
        return rows

    specs = [_CellSpec(N, kmax, f"seed={cfg.seed};N={N}", lambda N=N: cell(N)) for N in cfg.N]
    result = _run_cells(name, specs, workers)
    result.rows[:0] = head
    return result


# ---------------------------------------------------------------------------
# transport self-test


def _random_lipschitz(rng: np.random.Generator, n: int, terms: int = 4):
    """A random piecewise-linear 1-Lipschitz function on R^n."""
    u = rng.standard_normal((terms, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    s = rng.standard_normal(terms)
    w = rng.random(terms)
    w /= w.sum()
    sign = rng.choice([-1.0, 1.0], size=terms)
    return lambda x: (sign * w * np.abs(x @ u.T - s)).sum(axis=-1)


def ot_selftest(instances: int = 200, pairs: int = 100, seed: int = 0) -> dict[str, float]:
    """Oracle-equivalence and metric-axiom checks on random instances.

    Returns counts and worst-case deviations; ``failures`` sums every violation.
    """
    rng = np.random.default_rng(seed)

    def points(m, n):
        return EmpiricalMeasure(rng.standard_normal((m, n)))

    def path_measure(m, n, steps):
        times = np.linspace(0.0, 1.0, steps)
        return EmpiricalPathMeasure(rng.standard_normal((m, steps, n)).cumsum(axis=1), times)

    matches, worst = 0, 0.0
    for i in range(instances):
        m, n = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        order = 1 + i % 2
        if i % 4 < 2:
            mu, nu = points(m, n), points(m, n)
            fast = wasserstein_p(mu, nu, order)
            slow = brute_force_ot(list(mu.points), list(nu.points),
                                  lambda x, y: float(np.linalg.norm(x - y)) ** order) ** (1 / order)
        else:
            steps = int(rng.integers(2, 6))
            mu, nu = path_measure(m, n, steps), path_measure(m, n, steps)
            fast = wasserstein_path(mu, nu, order)
            slow = brute_force_ot(list(mu.paths), list(nu.paths), lambda x, y: sup_norm_dist(x, y) ** order) ** (1 / order)
        diff = abs(fast - slow)
        worst = max(worst, diff)
        matches += diff <= 1e-12

    sym, tri, lyap, dual = 0.0, 0, 0, 0
    for i in range(pairs):
        m, n = int(rng.integers(1, 9)), int(rng.integers(1, 4))
        if i % 2:
            a, b, c = (path_measure(m, n, 4) for _ in range(3))
            W = lambda x, y, o=1: wasserstein_path(x, y, o)
            f0 = _random_lipschitz(rng, n)
            grid = int(rng.integers(0, 4))
            f = lambda pm: f0(pm.paths[:, grid])
        else:
            a, b, c = (points(m, n) for _ in range(3))
            W = lambda x, y, o=1: wasserstein_p(x, y, o)
            f0 = _random_lipschitz(rng, n)
            f = lambda pm: f0(pm.points)
        sym = max(sym, abs(W(a, b, 1) - W(b, a, 1)), abs(W(a, b, 2) - W(b, a, 2)))
        tri += W(a, c, 1) > W(a, b, 1) + W(b, c, 1) + 1e-9
        tri += W(a, c, 2) > W(a, b, 2) + W(b, c, 2) + 1e-9
        lyap += W(a, b, 1) > W(a, b, 2) + 1e-12
        dual += abs(f(a).mean() - f(b).mean()) > W(a, b, 1) + 1e-9

    dirac = 0
    for _ in range(50):
        steps, n = int(rng.integers(2, 8)), int(rng.integers(1, 4))
        x, y = path_measure(1, n, steps), path_measure(1, n, steps)
        dirac += wasserstein_path(x, y, 2) != sup_norm_dist(x.paths[0], y.paths[0])

    failures = (instances - matches) + (sym != 0.0) + tri + lyap + dual + dirac
    return {
        "oracle_instances": float(instances),
        "oracle_matches": float(matches),
        "oracle_max_abs_diff": worst,
        "symmetry_max_abs_diff": sym,
        "triangle_violations": float(tri),
        "lyapunov_violations": float(lyap),
        "dual_violations": float(dual),
        "dirac_mismatches": float(dirac),
        "failures": float(failures),
    }


def run_ot_selftest(cfg: ExperimentConfig, workers: int = 1) -> SweepResult:
    """``replications`` is the number of brute-force oracle instances."""
    name = cfg.experiment

    def cell() -> list[Row]:
        t0 = time.perf_counter()
        stats = ot_selftest(cfg.replications, 100, cfg.seed)
        ms = _ms(t0)
        return [Row(name, "", "", "all", key, value, "", ms, f"seed={cfg.seed}") for key, value in stats.items()]

    return _run_cells(name, [_CellSpec("", "", f"seed={cfg.seed}", cell)], workers)


# ---------------------------------------------------------------------------
# Euler-Maruyama strong order


def ou_exact_increments(theta: float, h: float, normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jointly Gaussian ``(dW, I)`` with ``I = int_0^h exp(-theta (h - s)) dW_s``.

    ``normals`` has a trailing axis of length 2.
    """
    if theta == 0.0:
        cov, var = h, h
    else:
        cov = -math.expm1(-theta * h) / theta
        var = -math.expm1(-2.0 * theta * h) / (2.0 * theta)
    dW = math.sqrt(h) * normals[..., 0]
    resid = max(var - cov * cov / h, 0.0)
    I = (cov / math.sqrt(h)) * normals[..., 0] + math.sqrt(resid) * normals[..., 1]
    return dW, I


def ou_exact_terminal(theta: float, sigma: float, z0: float, T: float, I: np.ndarray) -> np.ndarray:
    """Exact ``z(T)`` of ``dz = -theta z dt + sigma dW`` from per-interval ``I`` (paths, k)."""
    k = I.shape[1]
    h = T / k
    weights = np.exp(-theta * h * np.arange(k - 1, -1, -1))
    return math.exp(-theta * T) * z0 + sigma * I @ weights


def run_em_order(cfg: ExperimentConfig, workers: int = 1) -> SweepResult:
    """Strong error at ``T`` of the particle scheme against exact OU paths on shared noise.

    ``replications`` is the number of independent paths.
    """
    model = cfg.build_model()
    params = cfg.model.get("params", {})
    theta = float(params.get("theta", 1.0))
    sigma = float(params.get("sigma", 1.0))
    z0 = float(params.get("z0", 1.0))
    paths, finest = cfg.replications, max(cfg.k)
    name = cfg.experiment
    lineage = f"seed={cfg.seed};stream={STREAM_OU_ORACLE};paths={paths};finest=k{finest}"

    def cell() -> list[Row]:
        ss = np.random.SeedSequence(cfg.seed, spawn_key=(STREAM_OU_ORACLE,))
        normals = np.random.default_rng(ss).standard_normal((paths, finest, 2))
        dW, I = ou_exact_increments(theta, cfg.T / finest, normals)
        exact = ou_exact_terminal(theta, sigma, z0, cfg.T, I)
        zeros = np.zeros((paths, paths))
        start = np.full((paths, 1), z0)
        rows, dts, errs = [], [], []
        for k in cfg.k:
            t1 = time.perf_counter()
            coarse = dW.reshape(paths, k, finest // k).sum(axis=2)[:, :, None]
            sim = SimConfig(cfg.T, k, paths, 1, cfg.seed)
            final = integrate(sim, model, zeros, start, coarse)[-1, :, 0]
            sq = (final - exact) ** 2
            mse, se = mean_and_se(sq)
            rms = math.sqrt(mse)
            se_rms = se / (2 * rms) if rms > 0 else 0.0
            rows.append(Row(name, "", k, "all", "strong_error", rms, se_rms, _ms(t1), lineage))
            dts.append(cfg.T / k)
            errs.append(rms)
        rows.append(_slope_row(name, "", dts, errs, "strong_order", lineage))
        return rows

    return _run_cells(name, [_CellSpec("", "", lineage, cell)], workers)


RUNNERS = {
    "lln_n_sweep": run_lln_n_sweep,
    "lln_k_sweep": run_lln_k_sweep,
    "sgd_demo": run_sgd_demo,
    "ot_selftest": run_ot_selftest,
    "em_order": run_em_order,
}


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> SweepResult:
    return RUNNERS[cfg.experiment](cfg, workers)


def run_and_write(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> tuple[SweepResult, Path]:
    """Run the experiment and write ``result.csv`` and ``manifest.txt``."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(cfg, out / "manifest.txt")
    result = run_experiment(cfg, workers)
    result.write_csv(out / "result.csv")
    return result, out
