"""Detecting the mixing weight u from one observed path.

The observer sees ``X`` only.  Hidden copies of the chain above it
(``Xtilde`` and its own drivers) are simulated independently of the
observation and reweighted by the Girsanov factor

    log Z_t^{-1} = sum_s b_s (X_{s+ds} - X_s) - 1/2 sum_s b_s^2 ds,

``b_s`` being the drift the hidden realization implies for the observed
coordinate.  Self-normalized weights give conditional expectations.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .drift import DriftKernel, MeanFieldHandle, as_weight
from .ensemble import PathEnsemble
from .errors import ConfigError, DegenerateStatisticError, DomainError, GridError
from .rng import Domain, stream


class DegeneracyWarning(RuntimeWarning):
    """Effective sample size fell below the threshold."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


@dataclass(eq=False)
class ObservationPath:
    values: np.ndarray
    dt: float
    provenance: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size < 2:
            raise ValueError("an observation needs at least two grid points")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observation contains non-finite values")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def steps(self) -> int:
        return self.values.size - 1

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def index_of(self, t: float) -> int:
        k = int(round(t / self.dt))
        if k < 0 or k > self.steps or abs(k * self.dt - t) > 1e-9 * max(1.0, t):
            raise GridError(f"t={t} is not on the observation grid")
        return k

    def truncated(self, t: float) -> "ObservationPath":
        return ObservationPath(self.values[:self.index_of(t) + 1], self.dt, self.provenance)

    @classmethod
    def from_csv(cls, path) -> "ObservationPath":
        """Two columns ``t,value`` with a header; the grid must be uniform."""
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t, v = data[:, 0], data[:, 1]
        if t.size < 2:
            raise ValueError("observation file needs at least two rows")
        dts = np.diff(t)
        dt = float(dts.mean())
        if np.max(np.abs(dts - dt)) > 1e-9 * max(1.0, dt) + 1e-12 or abs(t[0]) > 1e-12:
            raise GridError("observation times must start at 0 on a uniform grid")
        return cls(v, dt, f"file:{Path(path).name}")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "value"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_ensemble(cls, ens: PathEnsemble, row: int = 0) -> "ObservationPath":
        return cls(ens.values[row], ens.dt, f"ensemble:seed={ens.seed},row={row}")


def synthetic_observation(u, horizon: float, dt: float, seed: int, depth: int = 20,
                          closure: str = "mckean_vlasov", kernel: DriftKernel | None = None
                          ) -> ObservationPath:
    """One path of ``X`` from the limit pair, started at 0.

    The hierarchy above ``X`` is a nested chain of ``depth`` levels whose
    mean-field term uses the exact law mean 0 of the linear kernel.
    """
    from .limit import NestedConfig, solve_nested_pair

    u = as_weight(u)
    kernel = kernel or DriftKernel.mean_revert()
    if closure == "mckean_vlasov" and u == 1.0:
        closure = "independent_bm"
    cfg = NestedConfig(depth=depth, replicas=1, closure=closure, dt=dt, horizon=horizon, seed=seed)
    res = solve_nested_pair(cfg, kernel, u, MeanFieldHandle.known_mean(0.0), keep_levels=1)
    return ObservationPath(res.levels[0, 0], dt, f"synthetic:u={u},seed={seed},depth={depth}")


# ---------------------------------------------------------------------------
# Girsanov weights
# ---------------------------------------------------------------------------
def girsanov_logweight(observation: ObservationPath, drift_values) -> np.ndarray:
    """Running ``log Z_t^{-1}`` on the grid (left-point sums), starting at 0.

    ``drift_values`` has shape ``(steps + 1,)`` or ``(N, steps + 1)``; only
    the left points of each step are used.
    """
    b = np.asarray(drift_values, dtype=float)
    if b.shape[-1] != observation.steps + 1:
        raise GridError(f"drift has {b.shape[-1]} grid points, observation {observation.steps + 1}")
    left = b[..., :-1]
    inc = left * observation.increments - 0.5 * left * left * observation.dt
    out = np.zeros(b.shape)
    out[..., 1:] = np.cumsum(inc, axis=-1)
    return out


# ---------------------------------------------------------------------------
# particle filter
# ---------------------------------------------------------------------------
@dataclass
class FilterResult:
    """Self-normalized estimates on the observation grid.

    ``estimates[name]`` and ``stderr[name]`` are arrays over grid times for
    the registered functions: ``one``, ``xt`` (level 2), ``xt2``,
    ``x_xt`` and ``level{j}`` for each simulated level.
    """

    times: np.ndarray
    estimates: dict
    stderr: dict
    ess: np.ndarray
    log_rho1: np.ndarray
    weights: np.ndarray
    stats: dict
    u: float
    depth: int
    collapse_time: float | None = None
    resampled_at: list = field(default_factory=list)
    ks_residual: np.ndarray | None = None

    def at(self, name: str, t: float) -> tuple[float, float]:
        k = int(round(t / (self.times[1] - self.times[0])))
        return float(self.estimates[name][k]), float(self.stderr[name][k])


def _hidden_drift(kernel: DriftKernel, u: float, t: float, x: np.ndarray, closure: str,
                  law: MeanFieldHandle | None) -> np.ndarray:
    """Drift of the hidden levels, shape ``(levels, N)``; row 0 is Xtilde."""
    drift = np.empty_like(x)
    lower = x[:-1]
    mf_all = _mf(kernel, t, x, law)
    if u == 1.0:
        drift[:-1] = kernel(t, lower, x[1:])
    elif u == 0.0:
        drift[:-1] = mf_all[:-1]
    else:
        drift[:-1] = u * kernel(t, lower, x[1:]) + (1 - u) * mf_all[:-1]
    if closure == "independent_bm":
        drift[-1] = 0.0
    elif closure == "mckean_vlasov":
        drift[-1] = mf_all[-1]
    else:
        raise ConfigError(f"filter closure must be independent_bm or mckean_vlasov, got {closure!r}")
    return drift


def _mf(kernel: DriftKernel, t: float, x: np.ndarray, law: MeanFieldHandle | None) -> np.ndarray:
    if law is None:
        if kernel.is_affine:
            return kernel.a_x * x + kernel.a_y * np.mean(x, axis=-1, keepdims=True) + kernel.c
        return np.stack([kernel.mean_field(t, row, MeanFieldHandle.cloud(row)) for row in x])
    return kernel.mean_field(t, x, law)


def _observed_drift(kernel: DriftKernel, u: float, t: float, xobs: float, xt: np.ndarray,
                    law: MeanFieldHandle | None, cloud: np.ndarray):
    """Drift of the observed coordinate per particle, its mean-field part and
    the centered kernel ``bbar(xobs, xt)``."""
    if law is None:
        mfo = float(kernel.mean_field(t, xobs, MeanFieldHandle.cloud(cloud)))
    else:
        mfo = float(kernel.mean_field(t, xobs, law))
    bbar = kernel(t, np.full(xt.shape, xobs), xt) - mfo
    return mfo + u * bbar, mfo, bbar


def _weighted(w: np.ndarray, f: np.ndarray) -> tuple[float, float]:
    m = float(np.dot(w, f))
    se = float(math.sqrt(np.dot(w * w, (f - m) ** 2)))
    return m, se


def particle_filter(observation: ObservationPath, kernel: DriftKernel, u, depth: int = 3,
                    particles: int = 1000, seed: int = 0, closure: str = "mckean_vlasov",
                    law: MeanFieldHandle | None = None, initial_var: float = 0.0,
                    resample: bool = False, ess_threshold: float = 0.1,
                    warn: bool = True) -> FilterResult:
    """Weighted ensemble of hidden hierarchies against one observed path.

    Hidden levels ``2 .. depth + 1`` are simulated under the model with
    candidate ``u``; level ``depth + 1`` is closed as in the nested solver.
    With the linear kernel the mean-field law defaults to the exact mean 0.
    With ``resample=True`` a multinomial bootstrap is applied whenever the
    ESS falls below ``ess_threshold * particles``; per-particle path
    statistics travel with their particle.
    """
    u = as_weight(u)
    if depth < 1:
        raise ConfigError("depth must be >= 1")
    if closure == "mckean_vlasov" and u == 1.0:
        closure = "independent_bm"
    if law is None and kernel.is_affine:
        law = MeanFieldHandle.known_mean(0.0)
    N, D = int(particles), int(depth)
    steps, dt = observation.steps, observation.dt
    X = observation.values
    dX = observation.increments
    sq = math.sqrt(dt)
    gens = [stream(seed, Domain.FILTER, j) for j in range(D)]
    g_init = stream(seed, Domain.FILTER, 0, sub=1)
    g_res = stream(seed, Domain.RESAMPLE, 0, sub=7)
    h = np.zeros((D, N))
    if initial_var > 0:
        h = math.sqrt(initial_var) * g_init.standard_normal((D, N))
    logw = np.zeros(N)
    num = np.zeros(N)      # int bbar (dX - mf dt)
    den = np.zeros(N)      # int bbar^2 dt
    est: dict = {}
    se: dict = {}
    one = np.empty(steps + 1)
    ess = np.empty(steps + 1)
    log_rho = np.empty(steps + 1)
    collapse = None
    resampled = []

    # rows: levels 2..D+1, xt^2, x*xt, then KS inputs (drift of xt, b, xt*b)
    nf = D + 2
    M = np.empty((steps + 1, nf + 3))
    S = np.empty((steps + 1, nf))
    F = np.empty((nf + 3, N))

    def record(k, w, hd, b):
        F[:D] = h
        F[D] = h[0] * h[0]
        F[D + 1] = X[k] * h[0]
        F[D + 2] = hd[0]
        F[D + 3] = b
        F[D + 4] = h[0] * b
        m = F @ w
        M[k] = m
        S[k] = np.sqrt(((F[:nf] - m[:nf, None]) ** 2) @ (w * w))
        ess[k] = 1.0 / float(np.dot(w, w))
        one[k] = math.fsum(w)

    block = max(1, min(256, (1 << 22) // (D * N)))
    k = 0
    z = None
    zpos = 0
    while True:
        t = k * dt
        top = logw.max()
        w = np.exp(logw - top)
        tot = w.sum()
        w /= tot
        log_rho[k] = top + math.log(tot / N)
        hd = _hidden_drift(kernel, u, t, h, closure, law)
        b, mfo, bbar = _observed_drift(kernel, u, t, X[k], h[0], law, h[0])
        record(k, w, hd, b)
        if collapse is None and ess[k] < ess_threshold * N:
            collapse = t
            if resample:
                idx = g_res.choice(N, size=N, p=w)
                h, num, den = h[:, idx], num[idx], den[idx]
                logw = np.full(N, float(logsumexp(logw) - math.log(N)))
                resampled.append(t)
                collapse = None
                b, mfo, bbar = _observed_drift(kernel, u, t, X[k], h[0], law, h[0])
                hd = _hidden_drift(kernel, u, t, h, closure, law)
            elif warn:
                warnings.warn(DegeneracyWarning(
                    f"effective sample size {ess[k]:.1f} < {ess_threshold * N:.1f} at t={t:.4g}", t))
        if k == steps:
            break
        # statistics and weights use left points
        num += bbar * (dX[k] - mfo * dt)
        den += bbar * bbar * dt
        logw += b * dX[k] - 0.5 * b * b * dt
        if z is None or zpos == z.shape[0]:
            nb = min(block, steps - k)
            z = np.stack([g.standard_normal((nb, N)) for g in gens], axis=1)
            zpos = 0
        h = h + dt * hd + sq * z[zpos]
        zpos += 1
        k += 1
    w = np.exp(logw - logw.max())
    w /= w.sum()
    for j in range(D):
        est[f"level{j + 2}"], se[f"level{j + 2}"] = M[:, j], S[:, j]
    est["one"], se["one"] = one, np.zeros(steps + 1)
    est["xt"], se["xt"] = est["level2"], se["level2"]
    est["xt2"], se["xt2"] = M[:, D], S[:, D]
    est["x_xt"], se["x_xt"] = M[:, D + 1], S[:, D + 1]
    ks_drift, ks_pib = M[:, D + 2], M[:, D + 3]       # pi(L phi), pi(b) for phi = xt
    ks_cov = M[:, D + 4] - est["xt"] * ks_pib          # pi(phi b) - pi(phi) pi(b)
    # Kushner-Stratonovich residual for phi = level-2 coordinate (left-point sums)
    innov = dX - ks_pib[:-1] * dt
    integ = np.concatenate([[0.0], np.cumsum(ks_drift[:-1] * dt + ks_cov[:-1] * innov)])
    ks = est["xt"] - est["xt"][0] - integ
    return FilterResult(observation.times, est, se, ess, log_rho, w, {"num": num, "den": den},
                        u, D, collapse, resampled, ks)


# ---------------------------------------------------------------------------
# linear-Gaussian oracle
# ---------------------------------------------------------------------------
@dataclass
class KalmanBucyResult:
    times: np.ndarray
    mean: np.ndarray        # (steps + 1, depth)
    cov: np.ndarray         # (steps + 1, depth, depth)

    def xt_mean(self) -> np.ndarray:
        return self.mean[:, 0]

    def xt_var(self) -> np.ndarray:
        return self.cov[:, 0, 0]


def hidden_generator(depth: int, u, closure: str = "mckean_vlasov") -> np.ndarray:
    u = as_weight(u)
    A = -np.eye(depth) + u * np.eye(depth, k=1)
    if closure == "independent_bm":
        A[-1, :] = 0.0
    elif closure == "mckean_vlasov":
        A[-1, :] = 0.0
        A[-1, -1] = -1.0
    else:
        raise ConfigError(f"unknown closure {closure!r}")
    return A


def kalman_bucy_oracle(observation: ObservationPath, depth: int, u, closure: str = "mckean_vlasov",
                       initial_var: float = 0.0, substeps: int = 10) -> KalmanBucyResult:
    """Exact filter for the truncated linear chain with mean-reverting kernel.

    Hidden state: levels ``2 .. depth + 1`` with ``dh = A h dt + dW``.
    Observation: ``dX + X dt = u h_1 dt + dB``.  The Riccati equation and the
    mean equation are integrated by RK4 with ``substeps`` steps per grid
    interval; the observation rate is constant within an interval.
    """
    u = as_weight(u)
    if closure == "mckean_vlasov" and u == 1.0:
        closure = "independent_bm"
    D = int(depth)
    A = hidden_generator(D, u, closure)
    H = np.zeros((1, D))
    H[0, 0] = u
    HtH = H.T @ H
    Qn = np.eye(D)
    steps, dt = observation.steps, observation.dt
    X = observation.values
    rate = (np.diff(X) + X[:-1] * dt) / dt     # left-point observation rate
    m = np.zeros(D)
    P = initial_var * np.eye(D)
    means = np.empty((steps + 1, D))
    covs = np.empty((steps + 1, D, D))
    means[0], covs[0] = m, P
    h = dt / substeps

    def f(m, P, y):
        dP = A @ P + P @ A.T + Qn - P @ HtH @ P
        dm = A @ m + (P @ H.T)[:, 0] * (y - float((H @ m)[0]))
        return dm, dP

    for k in range(steps):
        y = rate[k]
        for _ in range(substeps):
            k1m, k1P = f(m, P, y)
            k2m, k2P = f(m + 0.5 * h * k1m, P + 0.5 * h * k1P, y)
            k3m, k3P = f(m + 0.5 * h * k2m, P + 0.5 * h * k2P, y)
            k4m, k4P = f(m + h * k3m, P + h * k3P, y)
            m = m + h / 6 * (k1m + 2 * k2m + 2 * k3m + k4m)
            P = P + h / 6 * (k1P + 2 * k2P + 2 * k3P + k4P)
            P = 0.5 * (P + P.T)
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(m))):
            raise FloatingPointError(f"Riccati integration blew up at t={(k + 1) * dt}")
        means[k + 1], covs[k + 1] = m, P
    return KalmanBucyResult(observation.times, means, covs)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------
@dataclass
class EstimatorResult:
    estimate: float
    method: str
    statistics: dict
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"estimate": self.estimate, "method": self.method, "flags": list(self.flags),
                "statistics": self.statistics, "diagnostics": self.diagnostics}


def _trap_sq(obs: ObservationPath) -> float:
    x2 = obs.values ** 2
    return float(obs.dt * (x2.sum() - 0.5 * (x2[0] + x2[-1])))


def _clamp(raw: float, flags: list) -> float:
    if raw < 0.0:
        flags.append("clamped_low")
        return 0.0
    if raw > 1.0:
        flags.append("clamped_high")
        return 1.0
    return raw


def modified_estimator(observation: ObservationPath) -> EstimatorResult:
    """``1 - (T - X_T^2) / (2 int_0^T X^2 dt)``; targets ``1 - sqrt(1 - u^2)``."""
    T = observation.horizon
    I = _trap_sq(observation)
    if not I > 0:
        raise DegenerateStatisticError("int X^2 dt is zero; the path carries no information")
    xT2 = float(observation.values[-1] ** 2)
    raw = 1.0 - (T - xT2) / (2.0 * I)
    flags = []
    est = _clamp(raw, flags)
    stats = {"T": T, "mean_square": I / T, "int_x2": I, "x_T2": xT2}
    return EstimatorResult(est, "modified", stats, flags, {"raw": raw})


def moments_estimator(observation: ObservationPath) -> EstimatorResult:
    """``sqrt(1 - ((2/T) int X^2 dt)^-2)``, clamped to 0 when the statistic is below 1."""
    T = observation.horizon
    if not T > 0:
        raise DomainError("T must be positive")
    I = _trap_sq(observation)
    s = 2.0 * I / T
    stats = {"T": T, "mean_square": I / T, "int_x2": I, "x_T2": float(observation.values[-1] ** 2),
             "statistic": s}
    flags = []
    if s < 1.0:
        flags.append("clamped_low")
        return EstimatorResult(0.0, "mm", stats, flags, {"raw": float("nan")})
    raw = math.sqrt(1.0 - s ** -2)
    return EstimatorResult(_clamp(raw, flags), "mm", stats, flags, {"raw": raw})


def moments_estimator_from_statistic(statistic: float) -> float:
    """Inverse of ``statistic = 1 / sqrt(1 - u^2)``."""
    if statistic < 1.0:
        return 0.0
    return math.sqrt(1.0 - statistic ** -2)


def mle_ratio(result: FilterResult) -> tuple[float, float, float]:
    """Weighted ``E[num | F] / E[den | F]`` from a filter run."""
    num = float(np.dot(result.weights, result.stats["num"]))
    den = float(np.dot(result.weights, result.stats["den"]))
    if not den > 0:
        raise DegenerateStatisticError("conditional expectation of int bbar^2 dt is not positive")
    return num / den, num, den


def _stable_crossing(cands: np.ndarray, gap: np.ndarray, flags: list) -> float:
    down, up = [], []
    for i in range(cands.size - 1):
        g0, g1 = gap[i], gap[i + 1]
        if g0 == 0.0 or g0 * g1 < 0:
            root = cands[i] if g0 == 0.0 else cands[i] - g0 * (cands[i + 1] - cands[i]) / (g1 - g0)
            (down if g1 < g0 else up).append((g0 - g1, float(root)))
    if gap[-1] == 0.0:
        down.append((0.0, float(cands[-1])))
    pool = down or up
    if not pool:
        flags.append("no_crossing")
        return float(cands[int(np.argmin(np.abs(gap)))])
    if len(pool) > 1:
        flags.append("multiple_crossings")
    if not down:
        flags.append("unstable_crossing")
    return max(pool)[1]


def conditional_mle(observation: ObservationPath, kernel: DriftKernel | None = None,
                    candidates=None, depth: int = 3, particles: int = 500, seed: int = 0,
                    closure: str = "mckean_vlasov", resample: bool = False) -> EstimatorResult:
    """Self-consistent conditional MLE over a candidate grid.

    For each candidate ``c`` the filter (run at ``u = c``) gives
    ``uhat(c) = E[int bbar (dX - mf dt) | F] / E[int bbar^2 dt | F]`` with
    ``bbar = b(x, z) - int b(x, y) m(dy)``.  The estimate is the zero of
    ``uhat(c) - c`` located by linear interpolation between grid points.
    Downward crossings (``uhat(c) - c`` going from + to -) are the stable
    fixed points of ``c <- uhat(c)`` and are preferred; among several the one
    with the largest local drop wins and ``multiple_crossings`` is flagged.
    Without any sign change the grid point minimizing ``|uhat(c) - c|`` is
    returned with the flag ``no_crossing``.
    All candidates share the same random numbers.
    """
    kernel = kernel or DriftKernel.mean_revert()
    if candidates is None:
        candidates = np.round(np.arange(21) * 0.05, 10)
    cands = np.asarray(list(candidates), dtype=float)
    if cands.size == 0:
        raise ConfigError("empty candidate grid")
    cands = np.sort(cands)
    uhat = np.empty(cands.size)
    ess_end = np.empty(cands.size)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneracyWarning)
        for i, c in enumerate(cands):
            res = particle_filter(observation, kernel, c, depth, particles, seed, closure,
                                  resample=resample, warn=False)
            uhat[i] = mle_ratio(res)[0]
            ess_end[i] = res.ess[-1]
    gap = uhat - cands
    flags = []
    est = _stable_crossing(cands, gap, flags)
    stats = {"T": observation.horizon, "mean_square": _trap_sq(observation) / observation.horizon,
             "x_T2": float(observation.values[-1] ** 2)}
    diag = {"candidates": cands.tolist(), "uhat": uhat.tolist(), "ess_final": ess_end.tolist()}
    return EstimatorResult(_clamp(est, flags), "cmle", stats, flags, diag)
