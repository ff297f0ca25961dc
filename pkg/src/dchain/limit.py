"""Limit pair ``(X, Xtilde)`` of the directed chain.

Two routes:

* nested chains: levels ``D+1, D, ..., 1`` where level ``j`` is driven by
  level ``j+1`` and the common marginal law; levels 1 and 2 form the pair;
* Picard iteration of the law map: given a path law ``m``, draw ``Xtilde``
  from ``m``, solve for ``X`` and return ``Law(X)``.

Plus an exact Gaussian construction for the linear kernel from the
Poisson (taboo) kernel representation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, expm

from .chain import InitialLaw
from .drift import DriftKernel, MeanFieldHandle, as_weight
from .ensemble import LawEnsemble, PathEnsemble
from .errors import (ConfigError, ConvergenceError, GridError, InvalidLawError,
                     PropagationError, TruncationError)
from .rng import BlockNoise, Domain, stream

CLOSURES = ("independent_bm", "mckean_vlasov", "frozen_law")
_BLOCK = 256


@dataclass(frozen=True)
class NestedConfig:
    depth: int = 30
    replicas: int = 10_000
    closure: str = "independent_bm"
    dt: float = 0.01
    horizon: float = 1.0
    seed: int = 0
    initial_law: InitialLaw = field(default_factory=InitialLaw)
    record_stride: int = 1

    def __post_init__(self):
        if int(self.depth) < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if int(self.replicas) < 1:
            raise ConfigError(f"replicas must be >= 1, got {self.replicas}")
        if self.closure not in CLOSURES:
            raise ConfigError(f"unknown closure {self.closure!r}; choose from {CLOSURES}")
        if not self.dt > 0 or not self.horizon > 0 or self.dt > self.horizon * (1 + 1e-12):
            raise ConfigError("need 0 < dt <= horizon")
        if int(self.record_stride) < 1:
            raise ConfigError("record_stride must be >= 1")

    @property
    def steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))


@dataclass
class NestedResult:
    """Recorded levels, shape ``(levels, replicas, points)``; index 0 is X."""

    levels: np.ndarray
    dt: float
    seed: int
    closure: str
    depth: int

    def level(self, j: int) -> PathEnsemble:
        return PathEnsemble(self.levels[j], self.dt, self.seed, False,
                            {"level": j + 1, "closure": self.closure, "depth": self.depth})

    @property
    def x(self) -> PathEnsemble:
        return self.level(0)

    @property
    def x_tilde(self) -> PathEnsemble:
        return self.level(1)

    def pair(self) -> tuple[PathEnsemble, PathEnsemble]:
        return self.x, self.x_tilde


# ---------------------------------------------------------------------------
# mean-field sources
# ---------------------------------------------------------------------------
class _LawSource:
    """Mean-field term ``int b(t, x, y) m_t(dy)`` for one of several law inputs."""

    def __init__(self, law, kernel: DriftKernel, steps: int, dt: float):
        self.kernel = kernel
        self.law = law
        if isinstance(law, PathEnsemble):
            if law.n == 0:
                raise InvalidLawError("empty law ensemble")
            if law.steps != steps or abs(law.dt - dt) > 1e-12 * max(1.0, dt):
                raise GridError(f"law grid (steps={law.steps}, dt={law.dt}) does not match "
                                f"(steps={steps}, dt={dt})")

    def __call__(self, t: float, k: int, x: np.ndarray) -> np.ndarray:
        law, kern = self.law, self.kernel
        if law is None:
            # self-consistent: the replica cloud of the same level
            if kern.is_affine:
                return kern.a_x * x + kern.a_y * np.mean(x) + kern.c
            return kern.mean_field(t, x, MeanFieldHandle.cloud(x))
        if isinstance(law, MeanFieldHandle):
            return kern.mean_field(t, x, law)
        ys = law.values[:, k]
        if kern.is_affine:
            return kern.a_x * x + kern.a_y * np.mean(ys) + kern.c
        return kern.mean_field(t, x, MeanFieldHandle.cloud(ys))

    def rows(self, t: float, k: int, x: np.ndarray) -> np.ndarray:
        """Mean-field term for a stack of levels, shape ``(levels, replicas)``."""
        kern = self.kernel
        if kern.is_affine:
            if self.law is None:
                m = np.mean(x, axis=1, keepdims=True)
            elif isinstance(self.law, MeanFieldHandle):
                m = self.law.first_moment()
            else:
                m = np.mean(self.law.values[:, k])
            return kern.a_x * x + kern.a_y * m + kern.c
        return np.stack([self(t, k, row) for row in x])


def _draw_initial(law: InitialLaw, seed: int, domain: int, index: int, size: int) -> np.ndarray:
    if law.kind == "point":
        return np.full(size, law.value)
    g = stream(seed, domain, index)
    if law.kind == "gaussian":
        return law.mean + math.sqrt(law.var) * g.standard_normal(size)
    pool = np.asarray(law.samples)
    return pool[g.integers(pool.size, size=size)]


def simulate_levels(levels: int, replicas: int, steps: int, dt: float, kernel: DriftKernel, u,
                    law, closure: str, noise, x0: np.ndarray, keep=(0, 1), stride: int = 1,
                    frozen: np.ndarray | None = None) -> np.ndarray:
    """Euler-Maruyama for a stack of chain levels stepped together in time.

    ``noise(j, nb)`` returns standard normals of shape ``(nb, replicas)`` for
    level ``j`` (0-based, 0 is the bottom).  ``x0`` has shape
    ``(levels, replicas)``.  With the ``frozen_law`` closure ``frozen`` holds
    the top-level paths, shape ``(replicas, steps + 1)``.  Returns recorded
    levels, shape ``(len(keep), replicas, steps // stride + 1)``.
    """
    u = as_weight(u)
    if closure == "mckean_vlasov" and u == 1.0:
        raise ConfigError("the mckean_vlasov closure needs a mean-field term (u < 1)")
    mf = _LawSource(law, kernel, steps, dt)
    x = np.array(x0, dtype=float).reshape(levels, replicas)
    if closure == "frozen_law":
        x[-1] = frozen[:, 0]
    keep = list(keep)
    out = np.empty((len(keep), replicas, steps // stride + 1))
    out[:, :, 0] = x[keep]
    sq = math.sqrt(dt)
    block = max(1, min(_BLOCK, (1 << 22) // (levels * replicas)))
    k = 0
    while k < steps:
        nb = min(block, steps - k)
        z = np.stack([noise(j, nb) for j in range(levels)], axis=1)   # (nb, levels, replicas)
        for s in range(nb):
            t = k * dt
            drift = np.empty_like(x)
            lower = x[:-1]
            if u == 1.0:
                drift[:-1] = kernel(t, lower, x[1:])
            else:
                field_ = mf.rows(t, k, lower)
                if u > 0:
                    drift[:-1] = u * kernel(t, lower, x[1:]) + (1 - u) * field_
                else:
                    drift[:-1] = field_
            if closure == "independent_bm":
                drift[-1] = 0.0
            elif closure == "mckean_vlasov":
                drift[-1] = mf(t, k, x[-1])
            nxt = x + dt * drift + sq * z[s]
            if closure == "frozen_law":
                nxt[-1] = frozen[:, k + 1]
            x = nxt
            k += 1
            if not np.all(np.isfinite(x)):
                bad = np.argwhere(~np.isfinite(x))[0]
                raise PropagationError(f"non-finite value at level {bad[0] + 1}, replica {bad[1]}",
                                       int(bad[1]))
            if k % stride == 0:
                out[:, :, k // stride] = x[keep]
    return out


def solve_nested_pair(config: NestedConfig, kernel: DriftKernel, u, marginal_law=None,
                      frozen_law: PathEnsemble | None = None, keep_levels: int = 2) -> NestedResult:
    """Simulate ``depth + 1`` nested levels and return the bottom ``keep_levels``.

    ``marginal_law`` feeds the mean-field term: ``None`` uses the replica
    cloud of each level, a :class:`MeanFieldHandle` (e.g. known mean 0) or a
    path ensemble on the same grid.  Level ``j`` reads its increments from
    stream ``(seed, LEVEL_NOISE, j)`` and its initial values from
    ``(seed, LEVEL_INITIAL, j)``, so levels are mutually independent given
    the seed.
    """
    u = as_weight(u)
    L = int(config.depth) + 1
    N = int(config.replicas)
    steps = config.steps
    if keep_levels < 1 or keep_levels > L:
        raise ConfigError(f"keep_levels must lie in [1, {L}]")
    if u < 1.0 and marginal_law is None and N < 2:
        raise InvalidLawError("a self-consistent mean-field term needs at least two replicas")
    frozen = None
    if config.closure == "frozen_law":
        if frozen_law is None or frozen_law.n == 0:
            raise InvalidLawError("frozen_law closure needs a non-empty law ensemble")
        if frozen_law.steps != steps:
            raise GridError("frozen law grid does not match the solver grid")
        pick = stream(config.seed, Domain.CLOSURE, 0).integers(frozen_law.n, size=N)
        frozen = frozen_law.values[pick]
    gens = [stream(config.seed, Domain.LEVEL_NOISE, j) for j in range(L)]

    def noise(j, nb):
        return gens[j].standard_normal((nb, N))

    x0 = np.stack([_draw_initial(config.initial_law, config.seed, Domain.LEVEL_INITIAL, j, N)
                   for j in range(L)])
    rec = simulate_levels(L, N, steps, config.dt, kernel, u, marginal_law, config.closure,
                          noise, x0, keep=range(keep_levels), stride=config.record_stride,
                          frozen=frozen)
    return NestedResult(rec, config.dt * config.record_stride, config.seed, config.closure,
                        int(config.depth))


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PicardConfig:
    max_iter: int = 30
    tolerance: float = 1e-3
    replicas: int = 10_000
    dt: float = 0.01
    horizon: float = 1.0
    seed: int = 0
    initial_law: InitialLaw = field(default_factory=InitialLaw)
    resample: str = "permutation"
    truncate: bool = True

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be positive")
        if int(self.max_iter) < 1:
            raise ConfigError("max_iter must be >= 1")
        if self.resample not in ("permutation", "replacement"):
            raise ConfigError(f"unknown resample mode {self.resample!r}")
        if not self.dt > 0 or not self.horizon > 0:
            raise ConfigError("need positive dt and horizon")

    @property
    def steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))


def constant_law(values, dt: float, steps: int, closure: str = "") -> LawEnsemble:
    """Paths frozen at their initial values; the usual Picard start."""
    v = np.asarray(values, dtype=float)
    return LawEnsemble(np.repeat(v[:, None], steps + 1, axis=1), dt, 0, False, {}, 0, closure)


def picard_map(law: LawEnsemble, kernel: DriftKernel, u, seed: int,
               initial_law: InitialLaw | None = None, resample: str = "permutation") -> LawEnsemble:
    """One application of the law map.

    Replica ``i`` gets ``Xtilde`` = input path ``r(i)`` and solves
    ``dX = [u b(X, Xtilde) + (1-u) int b(X, y) law_t(dy)] dt + dB``.
    The noise, initial values and resampling map depend only on ``seed``,
    so successive applications share random numbers and their outputs can
    be compared path by path.
    """
    u = as_weight(u)
    N, steps, dt = law.n, law.steps, law.dt
    if N == 0:
        raise InvalidLawError("empty law ensemble")
    initial_law = initial_law or InitialLaw()
    idx = np.arange(N)
    x = initial_law.draw(seed, idx)
    g = stream(seed, Domain.RESAMPLE, 0)
    if resample == "permutation":
        pick = g.permutation(N)
    elif resample == "replacement":
        pick = g.integers(N, size=N)
    else:
        raise ConfigError(f"unknown resample mode {resample!r}")
    tilde = law.values[pick]
    mf = _LawSource(law, kernel, steps, dt)
    noise = BlockNoise(seed, Domain.NOISE, idx)
    out = np.empty((N, steps + 1))
    out[:, 0] = x
    sq = math.sqrt(dt)
    k = 0
    while k < steps:
        nb = min(_BLOCK, steps - k)
        z = noise.block(nb)
        for s in range(nb):
            t = k * dt
            if u == 1.0:
                drift = kernel(t, x, tilde[:, k])
            elif u == 0.0:
                drift = mf(t, k, x)
            else:
                drift = u * kernel(t, x, tilde[:, k]) + (1 - u) * mf(t, k, x)
            x = x + dt * drift + sq * z[:, s]
            k += 1
            out[:, k] = x
    if not np.all(np.isfinite(out)):
        i = int(np.argwhere(~np.isfinite(out))[0, 0])
        raise PropagationError(f"non-finite path for replica {i}", i)
    return LawEnsemble(out, dt, seed, False, {"u": u, "resample": resample},
                       law.generation + 1, law.closure or "picard")


@dataclass
class PicardResult:
    law: LawEnsemble
    trace: list
    converged: bool


def picard_solve(config: PicardConfig, kernel: DriftKernel, u, start: LawEnsemble | None = None,
                 raise_on_failure: bool = True) -> PicardResult:
    """Iterate the law map until successive laws are within ``tolerance``.

    The distance is the truncated path-space distance of
    :func:`dchain.measures.pathspace_distance` (an upper bound).  ``trace[k]``
    is the distance between iterates ``k + 1`` and ``k``.
    """
    from .measures import pathspace_distance

    steps = config.steps
    if start is None:
        x0 = config.initial_law.draw(config.seed, np.arange(config.replicas))
        start = constant_law(x0, config.dt, steps, "picard")
    law = start
    trace = []
    for _ in range(int(config.max_iter)):
        new = picard_map(law, kernel, u, config.seed, config.initial_law, config.resample)
        d = pathspace_distance(new, law, truncate=config.truncate, seed=config.seed)
        trace.append(d)
        law = new
        if d <= config.tolerance:
            return PicardResult(law, trace, True)
    if raise_on_failure:
        raise ConvergenceError(
            f"no convergence in {config.max_iter} iterations (last distance {trace[-1]:.3g})", trace)
    return PicardResult(law, trace, False)


# ---------------------------------------------------------------------------
# exact construction from the Poisson kernel
# ---------------------------------------------------------------------------
def poisson_tail_mass(K: int, horizon: float, u) -> float:
    """``max_{v <= T} sum_{k >= K} p_{0k}(v)``: level mass a K-truncation drops."""
    from .oracle import _poisson_tail

    u = as_weight(u)
    if u == 0.0:
        return 0.0 if K >= 1 else 1.0
    vs = np.linspace(0.0, horizon, 401)[1:]
    return float(max(math.exp(-(1 - u) * v) * _poisson_tail(K, u * v) for v in vs))


def required_terms(horizon: float, u, tail_tol: float) -> int:
    K = 1
    while poisson_tail_mass(K, horizon, u) > tail_tol:
        K += 1
    return K


@dataclass
class PoissonConstruction:
    paths: PathEnsemble
    num_terms: int
    tail_mass: float


def poisson_kernel_construct(u, dt: float, horizon: float, num_terms: int, replicas: int,
                             seed: int, tail_tol: float = 1e-6) -> PoissonConstruction:
    """``Xtilde_t = sum_{k<K} int_0^t p_{0k}(t-s; u) dW_{s,k}`` on a uniform grid.

    The K noise integrals are carried as a K-dimensional linear system
    ``dY = Q_K Y dt + dW`` (Q_K the truncated taboo generator) whose first
    coordinate is exactly the truncated sum; it is advanced with its exact
    Gaussian transition, so there is no time-discretization error.
    """
    from .oracle import taboo_generator

    u = as_weight(u)
    K = int(num_terms)
    if K < 1:
        raise ConfigError("num_terms must be >= 1")
    tail = poisson_tail_mass(K, horizon, u)
    if tail > tail_tol:
        need = required_terms(horizon, u, tail_tol)
        raise TruncationError(f"K={K} leaves tail mass {tail:.3g} > {tail_tol:g}; need K >= {need}",
                              need)
    steps = max(1, int(round(horizon / dt)))
    Q = taboo_generator(K, u)
    E = expm(dt * Q)
    # Van Loan: covariance of int_0^h exp(sQ) dW
    big = np.zeros((2 * K, 2 * K))
    big[:K, :K] = -Q
    big[:K, K:] = np.eye(K)
    big[K:, K:] = Q.T
    F = expm(dt * big)
    cov = E @ F[:K, K:]
    cov = 0.5 * (cov + cov.T)
    C = cholesky(cov + 1e-300 * np.eye(K), lower=True)
    gens = [stream(seed, Domain.POISSON, k) for k in range(K)]
    Y = np.zeros((K, replicas))
    out = np.empty((replicas, steps + 1))
    out[:, 0] = 0.0
    k = 0
    while k < steps:
        nb = min(_BLOCK, steps - k)
        z = np.stack([g.standard_normal((nb, replicas)) for g in gens], axis=1)  # (nb, K, N)
        for s in range(nb):
            Y = E @ Y + C @ z[s]
            k += 1
            out[:, k] = Y[0]
    ens = PathEnsemble(out, dt, seed, False, {"u": u, "num_terms": K})
    return PoissonConstruction(ens, K, tail)
