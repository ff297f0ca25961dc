"""Finite circular directed chain with mean-field interaction.

Particle ``i`` feels its successor ``i + 1`` (indices mod ``n``) with weight
``u`` and the empirical measure of the whole ring with weight ``1 - u``::

    dX_i = [u b(X_i, X_{i+1}) + (1 - u) (1/n) sum_j b(X_i, X_j)] dt + dW_i

Time stepping is Euler-Maruyama with all drifts taken at the pre-step state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .drift import DriftKernel, as_weight
from .ensemble import PathEnsemble
from .errors import CapacityError, ConfigError, PropagationError
from .rng import BlockNoise, Domain, stream

DEFAULT_BUDGET = 2 * 1024**3
_BLOCK = 256


@dataclass(frozen=True)
class InitialLaw:
    """Common initial law of the particles.

    ``kind`` is ``"point"`` (``value``), ``"gaussian"`` (``mean``, ``var``) or
    ``"samples"`` (draw uniformly from ``samples``).
    """

    kind: str = "point"
    value: float = 0.0
    mean: float = 0.0
    var: float = 0.0
    samples: tuple = ()

    def __post_init__(self):
        if self.kind not in ("point", "gaussian", "samples"):
            raise ConfigError(f"unknown initial law {self.kind!r}")
        if self.kind == "gaussian" and not self.var >= 0:
            raise ConfigError(f"initial variance must be >= 0, got {self.var}")
        if self.kind == "samples" and len(self.samples) == 0:
            raise ConfigError("sample initial law needs at least one sample")

    @classmethod
    def point(cls, c: float = 0.0) -> "InitialLaw":
        return cls("point", value=float(c))

    @classmethod
    def gaussian(cls, mean: float, var: float) -> "InitialLaw":
        return cls("gaussian", mean=float(mean), var=float(var))

    @classmethod
    def from_samples(cls, samples) -> "InitialLaw":
        return cls("samples", samples=tuple(float(s) for s in np.ravel(samples)))

    @classmethod
    def from_file(cls, path) -> "InitialLaw":
        """One value per line; blank lines and ``#`` comments are skipped."""
        return cls.from_samples(np.loadtxt(path, comments="#", ndmin=1))

    def draw(self, seed: int, indices, domain: int = Domain.INITIAL) -> np.ndarray:
        """Initial values; value ``k`` depends only on ``(seed, indices[k])``."""
        indices = np.asarray(indices, dtype=np.int64)
        if self.kind == "point":
            return np.full(indices.size, self.value)
        out = np.empty(indices.size)
        if self.kind == "gaussian":
            sd = np.sqrt(self.var)
            for k, i in enumerate(indices):
                out[k] = self.mean + sd * stream(seed, domain, int(i)).standard_normal()
        else:
            pool = np.asarray(self.samples)
            for k, i in enumerate(indices):
                out[k] = pool[stream(seed, domain, int(i)).integers(pool.size)]
        return out


@dataclass(frozen=True)
class ChainConfig:
    n: int
    u: float
    dt: float = 0.01
    horizon: float = 1.0
    seed: int = 0
    initial_law: InitialLaw = field(default_factory=InitialLaw)
    record_stride: int = 1
    stream_offset: int = 0
    exclude_self: bool = False
    memory_budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if int(self.n) < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        as_weight(self.u)
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if self.dt > self.horizon * (1 + 1e-12):
            raise ConfigError("dt must not exceed the horizon")
        if int(self.record_stride) < 1:
            raise ConfigError("record_stride must be >= 1")

    @property
    def steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))


def _empirical_term(kernel: DriftKernel, t: float, x: np.ndarray, exclude_self: bool) -> np.ndarray:
    n = x.size
    if kernel.is_affine:
        total = np.sum(x)
        if exclude_self:
            if n == 1:
                return np.zeros(1)
            return (kernel.a_x * x * (n - 1) + kernel.a_y * (total - x) + kernel.c * (n - 1)) / n
        return kernel.a_x * x + kernel.a_y * (total / n) + kernel.c
    w = np.full(n, 1.0 / n)
    out = np.empty(n)
    step = max(1, (1 << 22) // n)
    for lo in range(0, n, step):
        block = kernel(t, x[lo:lo + step, None], x[None, :])
        if exclude_self:
            idx = np.arange(lo, min(lo + step, n))
            block[idx - lo, idx] = 0.0
        out[lo:lo + step] = block @ w
    return out


def chain_drift(state, kernel: DriftKernel, u, t: float, exclude_self: bool = False) -> np.ndarray:
    """Drift of every particle at the given state (no time step)."""
    u = as_weight(u)
    x = np.asarray(state, dtype=float)
    neighbor = np.roll(x, -1)
    if u == 1.0:
        return np.asarray(kernel(t, x, neighbor), dtype=float)
    mf = _empirical_term(kernel, t, x, exclude_self)
    if u == 0.0:
        return mf
    return u * kernel(t, x, neighbor) + (1.0 - u) * mf


def _check_finite(x: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(x)
    if bad.any():
        i = int(np.argmax(bad))
        raise PropagationError(f"non-finite {what} at particle {i}", i)


def step_chain(state, kernel: DriftKernel, u, t: float, dt: float, noise,
               exclude_self: bool = False) -> np.ndarray:
    """One synchronous Euler-Maruyama step of the circular chain."""
    x = np.asarray(state, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != x.shape:
        raise ValueError(f"noise has shape {noise.shape}, state {x.shape}")
    _check_finite(x, "state")
    out = x + dt * chain_drift(x, kernel, u, t, exclude_self) + np.sqrt(dt) * noise
    _check_finite(out, "state after step")
    return out


def required_bytes(config: ChainConfig) -> int:
    points = config.steps // config.record_stride + 1
    return 8 * config.n * points


def simulate_chain(config: ChainConfig, kernel: DriftKernel) -> PathEnsemble:
    """Simulate the ring and return every ``record_stride``-th grid point.

    Particle ``i`` reads its increments from stream ``stream_offset + i``.
    """
    need = required_bytes(config)
    if need > config.memory_budget:
        raise CapacityError(
            f"{config.n} particles x {config.steps // config.record_stride + 1} points "
            f"need {need} bytes, budget is {config.memory_budget}", need)
    n, steps, dt, stride = int(config.n), config.steps, float(config.dt), int(config.record_stride)
    idx = np.arange(n) + int(config.stream_offset)
    x = config.initial_law.draw(config.seed, idx)
    noise = BlockNoise(config.seed, Domain.NOISE, idx)
    out = np.empty((n, steps // stride + 1))
    out[:, 0] = x
    k = 0
    while k < steps:
        nb = min(_BLOCK, steps - k)
        z = noise.block(nb)
        for j in range(nb):
            x = step_chain(x, kernel, config.u, k * dt, dt, z[:, j], config.exclude_self)
            k += 1
            if k % stride == 0:
                out[:, k // stride] = x
    meta = {"u": float(config.u), "kernel": kernel.kind, "exclude_self": config.exclude_self,
            "stream_offset": int(config.stream_offset)}
    return PathEnsemble(out, dt * stride, config.seed, True, meta)


def consecutive_tuples(values: np.ndarray, k: int, start: int) -> np.ndarray:
    """Rows ``(x_i, ..., x_{i+k-1})`` (circular) for ``i = start, start+2, ...``."""
    n = values.size
    base = np.arange(start, n, 2)
    return values[(base[:, None] + np.arange(k)[None, :]) % n]


def shift_invariance_statistic(ensemble: PathEnsemble, k: int, t: float) -> float:
    """Energy distance between k-tuples started at even and at odd positions."""
    from .measures import energy_distance

    if k < 1 or k > ensemble.n:
        raise ValueError(f"window k={k} must lie in [1, {ensemble.n}]")
    if ensemble.n < 2:
        raise ValueError("need at least two particles")
    x = ensemble.at(t)
    return energy_distance(consecutive_tuples(x, k, 0), consecutive_tuples(x, k, 1))


def shift_invariance_null_quantile(ensemble: PathEnsemble, k: int, t: float, q: float = 0.99,
                                   n_perm: int = 200, seed: int = 0) -> float:
    """Permutation quantile of the statistic with even/odd labels shuffled."""
    from .measures import energy_distance_from_matrix, pairwise_distances

    x = ensemble.at(t)
    pooled = np.vstack([consecutive_tuples(x, k, 0), consecutive_tuples(x, k, 1)])
    D = pairwise_distances(pooled)
    n_even = (ensemble.n + 1) // 2
    rng = stream(seed, Domain.MISC, 1)
    stats = np.empty(n_perm)
    for b in range(n_perm):
        mask = np.zeros(pooled.shape[0], dtype=bool)
        mask[rng.permutation(pooled.shape[0])[:n_even]] = True
        stats[b] = energy_distance_from_matrix(D, mask)
    return float(np.quantile(stats, q))
