"""Coefficient models for graphon particle systems.

A model bundles the interaction kernel ``F``, the self drift ``G`` and the
diffusion matrix ``H`` of

    dz_p = [ int A(p,q) int F(t,p,q,z,z_p) mu_{t,q}(dz) dq + G(t,p,eta_p,z_p) ] dt
           + H(t,p,eta_p,z_p) dw_p

together with the exogenous process ``eta`` and the initial law.

Coefficient functions are pure and vectorised. With label arrays ``p``, ``q``
of a common broadcast shape ``S`` and states of shape ``S + (n,)``:

* ``F(t, p, q, z, y)`` returns ``S + (n,)``
* ``G(t, p, eta, y)`` returns ``S + (n,)``
* ``H(t, p, eta, y)`` returns ``S + (n, n)``

``t`` is always a Python float.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class ExogenousSpec:
    """Exogenous coefficient process ``eta_p``, independent across labels.

    ``kind`` is ``"zero"`` or ``"ou"``; the OU process starts from its
    stationary law so it is zero-mean at every time.
    """

    kind: str = "zero"
    theta: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "ou"):
            raise ValueError(f"unknown exogenous process {self.kind!r}")
        if self.kind == "ou" and (self.theta <= 0 or self.sigma < 0):
            raise ValueError("OU process needs theta > 0 and sigma >= 0")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def sample(self, times: Array, normals: Array) -> Array:
        """Paths on ``times`` from standard normals of shape ``(..., len(times), n)``.

        Uses the exact OU transition between grid times.
        """
        if self.is_zero:
            return np.zeros_like(normals)
        out = np.empty_like(normals)
        sd = self.sigma / np.sqrt(2.0 * self.theta)
        out[..., 0, :] = sd * normals[..., 0, :]
        for m in range(1, len(times)):
            decay = np.exp(-self.theta * (times[m] - times[m - 1]))
            out[..., m, :] = decay * out[..., m - 1, :] + sd * np.sqrt(1.0 - decay**2) * normals[..., m, :]
        return out


@dataclass(frozen=True)
class InitialLawSpec:
    """Law of ``z_p(0)``: a point, a deterministic label field, or a Gaussian around a field."""

    kind: str
    dim: int
    point: Array | None = None
    field: Callable[[Array], Array] | None = None
    cov: Array | None = None

    def __post_init__(self):
        if self.kind not in ("deterministic", "deterministic_field", "gaussian"):
            raise ValueError(f"unknown initial law {self.kind!r}")
        if self.kind == "deterministic" and (self.point is None or np.shape(self.point) != (self.dim,)):
            raise ValueError("deterministic initial law needs a point of length dim")
        if self.kind != "deterministic" and self.field is None:
            raise ValueError(f"{self.kind} initial law needs a mean field")
        if self.kind == "gaussian":
            cov = np.asarray(self.cov, float)
            if cov.shape != (self.dim, self.dim):
                raise ValueError("covariance must be dim x dim")

    @property
    def is_deterministic(self) -> bool:
        return self.kind != "gaussian"

    def mean(self, labels: Array) -> Array:
        labels = np.asarray(labels, float)
        if self.kind == "deterministic":
            return np.broadcast_to(np.asarray(self.point, float), labels.shape + (self.dim,)).copy()
        return np.asarray(self.field(labels), float).reshape(labels.shape + (self.dim,))

    def sample(self, labels: Array, normals: Array) -> Array:
        """Initial states at ``labels`` given standard normals of shape ``labels.shape + (n,)``."""
        mean = self.mean(labels)
        if self.is_deterministic:
            return mean
        w, v = np.linalg.eigh(np.asarray(self.cov, float))
        root = v * np.sqrt(np.clip(w, 0.0, None))
        return mean + normals @ root.T

    def moment(self, labels: Array, normals: Array, order: float) -> float:
        """Monte Carlo estimate of ``sup_p E|z_p(0)|^order`` over ``labels``.

        ``normals`` has shape ``(samples, len(labels), n)``.
        """
        labels = np.asarray(labels, float)
        z = self.sample(labels[None, :], normals)
        return float(np.max(np.mean(np.linalg.norm(z, axis=-1) ** order, axis=0)))


def deterministic(point) -> InitialLawSpec:
    point = np.atleast_1d(np.asarray(point, float))
    return InitialLawSpec("deterministic", point.size, point=point)


def label_field(dim: int = 1, scale: float = 1.0, offset: float = 0.0) -> InitialLawSpec:
    """``z_p(0) = offset + scale * p`` in every component."""
    return InitialLawSpec(
        "deterministic_field",
        dim,
        field=lambda p: offset + scale * np.repeat(np.asarray(p, float)[..., None], dim, axis=-1),
    )


@dataclass(frozen=True)
class GainSchedule:
    """Consensus gain ``alpha1(t)`` and gradient gain ``alpha2(t)``."""

    alpha1: Callable[[float], float]
    alpha2: Callable[[float], float]

    def check(self, T: float, probes: int = 257, bisections: int = 40) -> None:
        """Raise ``ValueError`` unless both gains are positive and continuous on ``[0, T]``.

        Continuity is probed by bisecting the interval with the largest jump
        between neighbouring probes; a jump that survives the bisection is
        reported as a discontinuity.
        """
        ts = np.linspace(0.0, T, probes)
        for name, gain in (("alpha1", self.alpha1), ("alpha2", self.alpha2)):
            values = np.array([gain(float(t)) for t in ts])
            if np.any(values <= 0):
                raise ValueError(f"{name} must be positive on [0, T]")
            i = int(np.argmax(np.abs(np.diff(values))))
            lo, hi = float(ts[i]), float(ts[i + 1])
            for _ in range(bisections):
                mid = 0.5 * (lo + hi)
                if abs(gain(mid) - gain(lo)) >= abs(gain(hi) - gain(mid)):
                    hi = mid
                else:
                    lo = mid
            if abs(gain(hi) - gain(lo)) > 1e-6 * (1.0 + np.max(np.abs(values))):
                raise ValueError(f"{name} looks discontinuous near t={lo:.6g}")


def constant_gain(c: float) -> Callable[[float], float]:
    c = float(c)
    return lambda t: c


def inverse_gain(c: float = 1.0) -> Callable[[float], float]:
    """``c / (1 + t)``."""
    c = float(c)
    return lambda t: c / (1.0 + t)


@dataclass(frozen=True)
class QuadraticCostFamily:
    """Local costs ``V(p, z) = 1/2 (z - c(p))^T Q(p) (z - c(p))``."""

    dim: int
    target: Callable[[Array], Array]
    weight: Callable[[Array], Array]

    def c(self, p) -> Array:
        p = np.asarray(p, float)
        return np.broadcast_to(np.asarray(self.target(p), float), p.shape + (self.dim,))

    def Q(self, p) -> Array:
        p = np.asarray(p, float)
        return np.broadcast_to(np.asarray(self.weight(p), float), p.shape + (self.dim, self.dim))

    def value(self, p, z) -> Array:
        d = np.asarray(z, float) - self.c(p)
        return 0.5 * np.einsum("...i,...ij,...j->...", d, self.Q(p), d)

    def grad(self, p, z) -> Array:
        d = np.asarray(z, float) - self.c(p)
        return np.einsum("...ij,...j->...i", self.Q(p), d)

    def gradient_lipschitz(self, labels: Array) -> float:
        return float(np.max(np.linalg.norm(self.Q(labels), ord=2, axis=(-2, -1))))


def quadratic_costs(dim: int = 1, target: Any = "label", weight: Any = "identity") -> QuadraticCostFamily:
    """Build a cost family from JSON-friendly descriptions.

    ``target``: ``"label"`` (c(p) = p in each component), a number, or a vector.
    ``weight``: ``"identity"``, ``"one_plus_label"`` ((1 + p) I), a number q (q I),
    or a symmetric positive-definite matrix.
    """
    if isinstance(target, str) and target == "label":
        tgt = lambda p: np.repeat(np.asarray(p, float)[..., None], dim, axis=-1)
    else:
        vec = np.broadcast_to(np.asarray(target, float), (dim,)).copy()
        tgt = lambda p: np.broadcast_to(vec, np.shape(p) + (dim,))

    eye = np.eye(dim)
    if isinstance(weight, str) and weight == "identity":
        wt = lambda p: np.broadcast_to(eye, np.shape(p) + (dim, dim))
    elif isinstance(weight, str) and weight == "one_plus_label":
        wt = lambda p: (1.0 + np.asarray(p, float))[..., None, None] * eye
    else:
        mat = np.asarray(weight, float)
        mat = mat * eye if mat.ndim == 0 else mat
        if mat.shape != (dim, dim) or not np.allclose(mat, mat.T):
            raise ValueError("weight matrix must be symmetric dim x dim")
        if np.min(np.linalg.eigvalsh(mat)) <= 0:
            raise ValueError("weight matrix must be positive definite")
        wt = lambda p: np.broadcast_to(mat, np.shape(p) + (dim, dim))
    return QuadraticCostFamily(dim, tgt, wt)


def midpoint_labels(cells: int) -> Array:
    return (np.arange(cells) + 0.5) / cells


def global_minimizer(costs: QuadraticCostFamily, label_grid) -> Array:
    """Minimiser of the label average of the quadratic costs over ``label_grid``."""
    labels = np.asarray(label_grid, float).ravel()
    if labels.size == 0:
        raise ValueError("label grid is empty")
    Q = costs.Q(labels)
    c = costs.c(labels)
    lhs = Q.sum(axis=0)
    if np.linalg.cond(lhs) > 1e12:
        raise np.linalg.LinAlgError("aggregate cost curvature is singular")
    # solve for the offset from one target so a constant target comes back exactly
    rhs = np.einsum("kij,kj->i", Q, c - c[0])
    return c[0] + np.linalg.solve(lhs, rhs)


@dataclass(frozen=True)
class CoefficientModel:
    """The triple (F, G, H) plus exogenous and initial-law specifications.

    ``affine_in_z`` declares that ``F`` is affine in its ``z`` argument for
    fixed ``(t, p, q, y)``; the mean-field solver then averages states before
    calling ``F`` instead of averaging ``F`` over every sample pair.
    """

    dim: int
    F: Callable
    G: Callable
    H: Callable
    eta_spec: ExogenousSpec = field(default_factory=ExogenousSpec)
    init_spec: InitialLawSpec | None = None
    affine_in_z: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.init_spec is not None and self.init_spec.dim != self.dim:
            raise ValueError("initial law dimension does not match model dimension")


def _zeros_like_state(t, p, eta, y):
    return np.zeros_like(np.asarray(y, float))


def _zero_diffusion(dim: int):
    def H(t, p, eta, y):
        y = np.asarray(y, float)
        return np.zeros(y.shape + (dim,))

    return H


def sgd_model(
    costs: QuadraticCostFamily,
    gains: GainSchedule,
    sigma1,
    init: InitialLawSpec,
) -> CoefficientModel:
    """Distributed SGD as a graphon particle system.

    ``F = alpha1(t) (z - y)``, ``G = -alpha2(t) grad V(p, y)``,
    ``H = -alpha2(t) Sigma1`` and no exogenous process.
    """
    n = costs.dim
    sigma1 = np.asarray(sigma1, float)
    if sigma1.ndim == 0:
        sigma1 = sigma1 * np.eye(n)
    if sigma1.shape != (n, n):
        raise ValueError("sigma1 must be n x n with n the cost dimension")
    if init.dim != n:
        raise ValueError("initial law dimension does not match the cost dimension")

    def F(t, p, q, z, y):
        return gains.alpha1(t) * (np.asarray(z, float) - np.asarray(y, float))

    def G(t, p, eta, y):
        return -gains.alpha2(t) * costs.grad(p, y)

    def H(t, p, eta, y):
        shape = np.shape(y)[:-1]
        return np.broadcast_to(-gains.alpha2(t) * sigma1, shape + (n, n))

    return CoefficientModel(
        n, F, G, H, ExogenousSpec("zero"), init, affine_in_z=True, name="sgd_quadratic"
    )


# ---------------------------------------------------------------------------
# assumption probes


@dataclass(frozen=True)
class ProbeReport:
    """Probe-based estimates of the regularity constants; purely diagnostic."""

    lipschitz_F: float
    lipschitz_G_y: float
    lipschitz_H: float
    lipschitz_GH_squared: float
    growth_GH: float
    growth_F: float
    probes: int
    C1: float | None = None
    C2: float | None = None

    @property
    def growth_ok(self) -> bool:
        ok = True
        if self.C1 is not None:
            ok &= self.growth_GH <= self.C1
        if self.C2 is not None:
            ok &= self.growth_F <= self.C2
        return ok


def _ratio_max(num: Array, den: Array) -> float:
    mask = den > 1e-12
    return float(np.max(num[mask] / den[mask])) if np.any(mask) else 0.0


def probe_assumptions(
    model: CoefficientModel,
    probes: int = 2000,
    seed: int = 0,
    T: float = 1.0,
    C1: float | None = None,
    C2: float | None = None,
) -> ProbeReport:
    """Estimate Lipschitz and linear-growth constants on random probes.

    Labels are uniform on [0, 1], times uniform on [0, T] and states standard
    Gaussian. The Lipschitz estimates are maxima of difference quotients, so
    they are lower bounds of the true constants.
    """
    if probes < 1:
        raise ValueError("probes must be positive")
    rng = np.random.default_rng(seed)
    n = model.dim
    norm = lambda a: np.linalg.norm(a.reshape(a.shape[0], -1), axis=-1)

    lip_F = lip_G = lip_H = lip_GH = grow_GH = grow_F = 0.0
    # one time per batch keeps gains scalar
    for t in rng.uniform(0.0, T, size=max(1, min(probes, 16))):
        t = float(t)
        b = max(1, probes // 16)
        p, q = rng.random(b), rng.random(b)
        z1, z2, y1, y2, x1, x2 = (rng.standard_normal((b, n)) for _ in range(6))

        F1, F2 = model.F(t, p, q, z1, y1), model.F(t, p, q, z2, y2)
        lip_F = max(lip_F, _ratio_max(norm(F1 - F2), norm(z1 - z2) + norm(y1 - y2)))
        grow_F = max(grow_F, float(np.max(norm(F1) / (1 + norm(z1) + norm(y1)))))

        G1, G2 = model.G(t, p, x1, y1), model.G(t, p, x1, y2)
        H1, H2 = model.H(t, p, x1, y1), model.H(t, p, x1, y2)
        lip_G = max(lip_G, _ratio_max(norm(G1 - G2), norm(y1 - y2)))
        lip_H = max(lip_H, _ratio_max(norm(H1 - H2), norm(y1 - y2)))

        G3, H3 = model.G(t, p, x2, y2), model.H(t, p, x2, y2)
        num = norm(G1 - G3) ** 2 + norm(H1 - H3) ** 2
        lip_GH = max(lip_GH, _ratio_max(num, norm(x1 - x2) ** 2 + norm(y1 - y2) ** 2))
        grow_GH = max(grow_GH, float(np.max((norm(G1) + norm(H1)) / (1 + norm(x1) + norm(y1)))))

    return ProbeReport(lip_F, lip_G, lip_H, lip_GH, grow_GH, grow_F, probes, C1, C2)


# ---------------------------------------------------------------------------
# presets


def parse_gain(spec: Any) -> Callable[[float], float]:
    if isinstance(spec, (int, float)):
        return constant_gain(spec)
    if isinstance(spec, dict):
        kind = spec.get("kind", "constant")
        value = float(spec.get("value", 1.0))
        if kind == "constant":
            return constant_gain(value)
        if kind == "inverse":
            return inverse_gain(value)
    raise ValueError(f"cannot parse gain {spec!r}")


def parse_init(spec: Any, dim: int) -> InitialLawSpec:
    """Initial law from ``{"kind": ..., ...}``.

    Kinds: ``deterministic`` (``point``), ``label`` (z(0) = offset + scale p),
    ``gaussian`` (``mean`` = "label" or a vector, ``cov`` = scalar or matrix).
    """
    spec = dict(spec or {"kind": "label"})
    kind = spec.pop("kind")
    if kind == "deterministic":
        init = deterministic(np.broadcast_to(np.asarray(spec.get("point", 0.0), float), (dim,)))
    elif kind == "label":
        init = label_field(dim, spec.get("scale", 1.0), spec.get("offset", 0.0))
    elif kind == "gaussian":
        mean = spec.get("mean", "label")
        if mean == "label":
            fld = label_field(dim).field
        else:
            vec = np.broadcast_to(np.asarray(mean, float), (dim,)).copy()
            fld = lambda p: np.broadcast_to(vec, np.shape(p) + (dim,))
        cov = np.asarray(spec.get("cov", 1.0), float)
        cov = cov * np.eye(dim) if cov.ndim == 0 else cov
        init = InitialLawSpec("gaussian", dim, field=fld, cov=cov)
    else:
        raise ValueError(f"unknown initial law kind {kind!r}")
    return init


def _sgd_quadratic(params: dict) -> CoefficientModel:
    dim = int(params.get("dim", 1))
    costs = quadratic_costs(dim, params.get("target", "label"), params.get("weight", "identity"))
    gains = GainSchedule(parse_gain(params.get("alpha1", 1.0)), parse_gain(params.get("alpha2", 1.0)))
    init = parse_init(params.get("init", {"kind": "deterministic", "point": 0.0}), dim)
    model = sgd_model(costs, gains, params.get("sigma1", 0.0), init)
    return replace(model, params=params)


def _consensus_only(params: dict) -> CoefficientModel:
    dim = int(params.get("dim", 1))
    alpha1 = parse_gain(params.get("alpha1", 1.0))

    def F(t, p, q, z, y):
        return alpha1(t) * (np.asarray(z, float) - np.asarray(y, float))

    sigma = float(params.get("sigma", 0.0))
    eye = np.eye(dim)

    def H(t, p, eta, y):
        return np.broadcast_to(sigma * eye, np.shape(y)[:-1] + (dim, dim))

    init = parse_init(params.get("init", {"kind": "label"}), dim)
    return CoefficientModel(
        dim, F, _zeros_like_state, H if sigma else _zero_diffusion(dim), ExogenousSpec("zero"), init,
        affine_in_z=True, name="consensus_only", params=params,
    )


def _kuramoto_like(params: dict) -> CoefficientModel:
    coupling = float(params.get("coupling", 1.0))
    omega = float(params.get("omega", 1.0))
    sigma = float(params.get("sigma", 0.1))

    def F(t, p, q, z, y):
        return coupling * np.sin(np.asarray(z, float) - np.asarray(y, float))

    def G(t, p, eta, y):
        # label-dependent natural frequency
        freq = omega * (np.asarray(p, float) - 0.5)
        return np.broadcast_to(freq[..., None], np.shape(y)) + np.asarray(eta, float)

    def H(t, p, eta, y):
        return np.full(np.shape(y) + (1,), sigma)

    init = parse_init(params.get("init", {"kind": "gaussian", "mean": 0.0, "cov": 1.0}), 1)
    eta = ExogenousSpec(**params["eta"]) if "eta" in params else ExogenousSpec("zero")
    return CoefficientModel(1, F, G, H, eta, init, name="kuramoto_like", params=params)


def _ou_driven(params: dict) -> CoefficientModel:
    dim = int(params.get("dim", 1))
    alpha1 = float(params.get("alpha1", 1.0))
    decay = float(params.get("decay", 1.0))
    sigma = float(params.get("sigma", 0.5))
    eye = np.eye(dim)

    def F(t, p, q, z, y):
        return alpha1 * (np.asarray(z, float) - np.asarray(y, float))

    def G(t, p, eta, y):
        return -decay * np.asarray(y, float) + np.asarray(eta, float)

    def H(t, p, eta, y):
        return np.broadcast_to(sigma * eye, np.shape(y)[:-1] + (dim, dim))

    eta = ExogenousSpec("ou", **params.get("eta", {"theta": 1.0, "sigma": 1.0}))
    init = parse_init(params.get("init", {"kind": "label"}), dim)
    return CoefficientModel(dim, F, G, H, eta, init, affine_in_z=True, name="ou_driven", params=params)


def _ou_scalar(params: dict) -> CoefficientModel:
    theta = float(params.get("theta", 1.0))
    sigma = float(params.get("sigma", 1.0))

    def G(t, p, eta, y):
        return -theta * np.asarray(y, float)

    def H(t, p, eta, y):
        return np.full(np.shape(y) + (1,), sigma)

    init = deterministic([float(params.get("z0", 1.0))])
    return CoefficientModel(1, _zero_interaction, G, H, ExogenousSpec("zero"), init,
                            affine_in_z=True, name="ou_scalar", params=params)


def _zero_interaction(t, p, q, z, y):
    return np.zeros_like(np.asarray(y, float))


PRESETS: dict[str, tuple[Callable[[dict], CoefficientModel], str, dict]] = {
    "sgd_quadratic": (
        _sgd_quadratic,
        "Distributed SGD on quadratic costs: F = a1(t)(z - y), G = -a2(t) Q(p)(y - c(p)), H = -a2(t) Sigma1.",
        {"dim": 1, "target": "label", "weight": "identity", "alpha1": 1.0, "alpha2": 1.0,
         "sigma1": 0.0, "init": {"kind": "deterministic", "point": 0.0}},
    ),
    "consensus_only": (
        _consensus_only,
        "Consensus: F = a1(t)(z - y), G = 0, H = sigma I (sigma defaults to 0).",
        {"dim": 1, "alpha1": 1.0, "sigma": 0.0, "init": {"kind": "label"}},
    ),
    "kuramoto_like": (
        _kuramoto_like,
        "Scalar phase model: F = K sin(z - y), G = omega (p - 1/2) + eta, H = sigma.",
        {"coupling": 1.0, "omega": 1.0, "sigma": 0.1, "init": {"kind": "gaussian", "mean": 0.0, "cov": 1.0}},
    ),
    "ou_scalar": (
        _ou_scalar,
        "Uncoupled scalar OU: F = 0, G = -theta y, H = sigma; used for strong-order checks.",
        {"theta": 1.0, "sigma": 1.0, "z0": 1.0},
    ),
    "ou_driven": (
        _ou_driven,
        "Consensus with OU-driven drift: F = a1 (z - y), G = -decay y + eta, H = sigma I.",
        {"dim": 1, "alpha1": 1.0, "decay": 1.0, "sigma": 0.5,
         "eta": {"theta": 1.0, "sigma": 1.0}, "init": {"kind": "label"}},
    ),
}


def make_model(name: str, params: dict | None = None) -> CoefficientModel:
    try:
        factory = PRESETS[name][0]
    except KeyError:
        raise ValueError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(dict(params or {}))
