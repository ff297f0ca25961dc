"""Empirical measures, distances between laws, and generator residuals.

Residuals check the weak form of the limit equations: for a test function
``g`` and the joint law ``M_s`` of ``(X_s, Xtilde_s)`` with marginal ``m_s``,

    <m_t, g> - <m_0, g> - int_0^t A_s g ds = 0,
    A_s g = u <M_s, b(y1, y2) g'(y1)> + (1-u) <m_s x m_s, b(y1, y2) g'(y1)>
            + 1/2 <m_s, g''>.

Both sides are estimated from samples, so residuals are small but not zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drift import DriftKernel, MeanFieldHandle, as_weight
from .ensemble import PathEnsemble
from .errors import GridError

_CHUNK = 1 << 22


# ---------------------------------------------------------------------------
# empirical measures
# ---------------------------------------------------------------------------
@dataclass(eq=False)
class EmpiricalMeasure:
    """Weighted atoms in ``R^k``; ``samples`` has shape ``(n, k)``."""

    samples: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("samples must be a non-empty (n, k) array")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        self.samples = s
        if self.weights is None:
            self.weights = np.full(s.shape[0], 1.0 / s.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (s.shape[0],) or np.any(w < 0):
                raise ValueError("weights must be nonnegative, one per sample")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"weights sum to {w.sum()!r}, not 1")
            self.weights = w

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    def integrate(self, f) -> float:
        """``sum_i w_i f(x_i)`` with ``f`` mapping ``(n, k)`` to ``(n,)``."""
        return float(np.dot(self.weights, f(self.samples)))

    def marginal(self, coords) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.samples[:, np.atleast_1d(coords)], self.weights)

    def deduplicated(self) -> "EmpiricalMeasure":
        """Merge identical atoms, summing their weights (atoms sorted)."""
        uniq, inv = np.unique(self.samples, axis=0, return_inverse=True)
        w = np.bincount(inv.ravel(), weights=self.weights, minlength=uniq.shape[0])
        return EmpiricalMeasure(uniq, w / w.sum())

    def as_handle(self) -> MeanFieldHandle:
        if self.dim != 1:
            raise ValueError("only 1-d measures can feed a mean-field term")
        return MeanFieldHandle.cloud(self.samples[:, 0], self.weights)


def empirical_joint(ensemble: PathEnsemble, t: float, k: int) -> EmpiricalMeasure:
    """``(1/n) sum_i delta_(X_{t,i}, ..., X_{t,i+k-1})`` with circular indices."""
    n = ensemble.n
    if k < 1 or k > n:
        raise ValueError(f"window k={k} must lie in [1, {n}]")
    x = ensemble.values[:, ensemble.index_of(t)]
    idx = (np.arange(n)[:, None] + np.arange(k)[None, :]) % n
    return EmpiricalMeasure(x[idx])


def pair_measure(x: PathEnsemble, x_tilde: PathEnsemble, t: float) -> EmpiricalMeasure:
    """Joint cloud of replica pairs ``(X_t^r, Xtilde_t^r)``."""
    if x.n != x_tilde.n or not x.same_grid(x_tilde):
        raise GridError("pair ensembles must share size and grid")
    k = x.index_of(t)
    return EmpiricalMeasure(np.column_stack([x.values[:, k], x_tilde.values[:, k]]))


@dataclass(eq=False)
class MeasureSeries:
    """Equal-weight clouds on a uniform time grid; ``samples`` is ``(T, n, k)``."""

    samples: np.ndarray
    dt: float

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.shape[0]) * self.dt

    @property
    def dim(self) -> int:
        return self.samples.shape[2]

    def at(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.samples[k])

    def index_of(self, t: float) -> int:
        k = int(round(t / self.dt))
        if k < 0 or k >= self.samples.shape[0] or abs(k * self.dt - t) > 1e-9 * max(1.0, t):
            raise GridError(f"t={t} is not on the series grid")
        return k

    @classmethod
    def from_levels(cls, levels, dt: float) -> "MeasureSeries":
        """Stack path arrays ``(n, T)`` (one per coordinate) into a series."""
        arr = np.stack([np.asarray(v, dtype=float) for v in levels], axis=-1)  # (n, T, k)
        return cls(np.ascontiguousarray(arr.transpose(1, 0, 2)), dt)

    @classmethod
    def from_chain(cls, ensemble: PathEnsemble, k: int) -> "MeasureSeries":
        """Consecutive k-tuples of a circular chain at every grid time."""
        n = ensemble.n
        idx = (np.arange(n)[:, None] + np.arange(k)[None, :]) % n
        return cls(np.ascontiguousarray(ensemble.values[idx].transpose(2, 0, 1)), ensemble.dt)


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------
def _quantile_pieces(xa, wa, xb, wb):
    """Monotone coupling of two weighted 1-d clouds as (mass, xa, xb) pieces."""
    oa, ob = np.argsort(xa, kind="stable"), np.argsort(xb, kind="stable")
    ca, cb = np.cumsum(wa[oa]), np.cumsum(wb[ob])
    ca[-1] = cb[-1] = 1.0
    cuts = np.union1d(ca, cb)
    mass = np.diff(np.concatenate([[0.0], cuts]))
    ia = np.minimum(np.searchsorted(ca, cuts - 0.5 * mass), oa.size - 1)
    ib = np.minimum(np.searchsorted(cb, cuts - 0.5 * mass), ob.size - 1)
    return mass, xa[oa][ia], xb[ob][ib]


def wasserstein1_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure, truncate: bool = False) -> float:
    """W1 between 1-d clouds by the quantile coupling.

    Exact for the untruncated cost.  With ``truncate`` the cost is
    ``min(|x - y|, 1)`` evaluated on the same coupling, an upper bound.
    """
    if mu.dim != 1 or nu.dim != 1:
        raise ValueError("wasserstein1_1d needs 1-d measures")
    a, b = mu.samples[:, 0], nu.samples[:, 0]
    uniform = (a.size == b.size and np.allclose(mu.weights, 1.0 / a.size, rtol=0, atol=1e-15)
               and np.allclose(nu.weights, 1.0 / b.size, rtol=0, atol=1e-15))
    if uniform:
        d = np.abs(np.sort(a) - np.sort(b))
        if truncate:
            d = np.minimum(d, 1.0)
        return float(np.mean(d))
    mass, xa, xb = _quantile_pieces(a, mu.weights, b, nu.weights)
    d = np.abs(xa - xb)
    if truncate:
        d = np.minimum(d, 1.0)
    return float(np.dot(mass, d))


@dataclass(frozen=True)
class TestFunction:
    """Bounded (|f| <= 1) Lipschitz-1 function on ``R^k``."""

    kind: str                  # "clamp" or "radial"
    coord: int = 0
    center: tuple = ()
    scale: float = 1.0
    offset: float = 0.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.kind == "clamp":
            return np.clip(x[:, self.coord] - self.offset, -1.0, 1.0)
        r = np.linalg.norm(x - np.asarray(self.center)[None, :], axis=1)
        return np.maximum(0.0, 1.0 - r / self.scale)


@dataclass
class TestFunctionFamily:
    """Finite family of bounded Lipschitz functions used as a sup proxy."""

    members: list = field(default_factory=list)

    @classmethod
    def default(cls, dim: int = 1, centers=(-2.0, -1.0, 0.0, 1.0, 2.0), scales=(1.0, 2.0)):
        members = []
        for i in range(dim):
            for c in centers:
                members.append(TestFunction("clamp", coord=i, offset=float(c)))
        grid = np.stack(np.meshgrid(*([np.asarray(centers, dtype=float)] * dim)), -1).reshape(-1, dim)
        for c in grid:
            for s in scales:
                members.append(TestFunction("radial", center=tuple(c), scale=float(s)))
        return cls(members)

    def verify(self, dim: int, points: int = 2000, seed: int = 0) -> bool:
        """Check ``|f| <= 1`` and Lipschitz <= 1 on random points and pairs."""
        g = np.random.default_rng(seed)
        x = g.normal(scale=3.0, size=(points, dim))
        y = x + g.normal(scale=0.5, size=(points, dim))
        for f in self.members:
            fx, fy = f(x), f(y)
            if np.any(np.abs(fx) > 1 + 1e-12):
                return False
            if np.any(np.abs(fx - fy) > np.linalg.norm(x - y, axis=1) * (1 + 1e-12)):
                return False
        return True


def bounded_lipschitz_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                               family: TestFunctionFamily | None = None) -> float:
    """``max_f |<mu, f> - <nu, f>|`` over the family: a lower bound of the BL norm."""
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    family = family or TestFunctionFamily.default(mu.dim)
    if not family.members:
        raise ValueError("empty test function family")
    return max(abs(mu.integrate(f) - nu.integrate(f)) for f in family.members)


def _sup_cost(a: np.ndarray, b: np.ndarray, truncate: bool) -> np.ndarray:
    out = np.empty(a.shape[0])
    step = max(1, _CHUNK // max(a.shape[1], 1))
    for lo in range(0, a.shape[0], step):
        out[lo:lo + step] = np.max(np.abs(a[lo:lo + step] - b[lo:lo + step]), axis=1)
    return np.minimum(out, 1.0) if truncate else out


def _nw_cost(A, B, oa, ob, truncate) -> float:
    """Cost of the north-west corner plan between orderings of equal-weight clouds."""
    na, nb = len(oa), len(ob)
    ca, cb = np.arange(1, na + 1) / na, np.arange(1, nb + 1) / nb
    cuts = np.union1d(ca, cb)
    mass = np.diff(np.concatenate([[0.0], cuts]))
    ia = np.minimum(np.searchsorted(ca, cuts - 0.5 * mass), na - 1)
    ib = np.minimum(np.searchsorted(cb, cuts - 0.5 * mass), nb - 1)
    return float(np.dot(mass, _sup_cost(A[oa[ia]], B[ob[ib]], truncate)))


@dataclass
class PathDistance:
    value: float
    couplings: dict
    upper_bound: bool = True

    def __float__(self) -> float:
        return self.value


def pathspace_distance(law_a: PathEnsemble, law_b: PathEnsemble, horizon: float | None = None,
                       truncate: bool = True, n_random: int = 2, seed: int = 0,
                       details: bool = False):
    """Upper bound on ``inf E[sup_{s<=T} |X_s - Y_s| ^ 1]`` over couplings.

    Tries explicit couplings (index pairing, sorting by the terminal value,
    sorting by the time average, and random pairings) and returns the
    cheapest.  The result is a certified upper bound on the infimum.
    """
    if not law_a.same_grid(law_b):
        raise GridError("path ensembles do not share a grid")
    last = law_a.steps if horizon is None else law_a.index_of(horizon)
    A, B = law_a.values[:, :last + 1], law_b.values[:, :last + 1]
    costs = {}
    if law_a.n == law_b.n:
        costs["index"] = float(np.mean(_sup_cost(A, B, truncate)))
    costs["terminal"] = _nw_cost(A, B, np.argsort(A[:, -1], kind="stable"),
                                 np.argsort(B[:, -1], kind="stable"), truncate)
    costs["average"] = _nw_cost(A, B, np.argsort(A.mean(axis=1), kind="stable"),
                                np.argsort(B.mean(axis=1), kind="stable"), truncate)
    g = np.random.default_rng([seed, 0x5D])
    for r in range(n_random):
        costs[f"random{r}"] = _nw_cost(A, B, g.permutation(law_a.n), g.permutation(law_b.n), truncate)
    value = min(costs.values())
    if details:
        return PathDistance(value, costs)
    return value


def energy_distance(x, y) -> float:
    """V-statistic energy distance ``2E|X-Y| - E|X-X'| - E|Y-Y'|`` in ``R^k``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    return float(2 * _mean_dist(x, y) - _mean_dist(x, x) - _mean_dist(y, y))


def _mean_dist(a: np.ndarray, b: np.ndarray) -> float:
    total = 0.0
    step = max(1, _CHUNK // max(b.shape[0] * b.shape[1], 1))
    for lo in range(0, a.shape[0], step):
        d = a[lo:lo + step, None, :] - b[None, :, :]
        total += float(np.sqrt(np.einsum("ijk,ijk->ij", d, d)).sum())
    return total / (a.shape[0] * b.shape[0])


def pairwise_distances(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    d = z[:, None, :] - z[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", d, d))


def energy_distance_from_matrix(D: np.ndarray, in_a: np.ndarray) -> float:
    """Energy distance between the two groups of a pooled distance matrix."""
    a = np.asarray(in_a, dtype=bool)
    b = ~a
    na, nb = a.sum(), b.sum()
    return float(2 * D[np.ix_(a, b)].sum() / (na * nb) - D[np.ix_(a, a)].sum() / na**2
                 - D[np.ix_(b, b)].sum() / nb**2)


# ---------------------------------------------------------------------------
# C^2 test functions with compact support
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SmoothTest:
    """``g(x) = h(x / width)`` for a profile ``h`` supported on [-1, 1]."""

    name: str
    width: float = 2.0

    def _profile(self, z):
        inside = np.abs(z) < 1.0
        zz = np.where(inside, z, 0.0)
        if self.name == "bump":
            q = 1.0 - zz * zz
            e = np.where(inside, np.exp(-1.0 / np.where(inside, q, 1.0)), 0.0)
            # derivatives of exp(-1/q) with q = 1 - z^2
            d1 = e * (-2.0 * zz) / np.where(inside, q * q, 1.0)
            qq = np.where(inside, q, 1.0)
            d2 = e * ((4 * zz * zz) / qq**4 - 2.0 / qq**2 - 8 * zz * zz / qq**3)
            return e, np.where(inside, d1, 0.0), np.where(inside, d2, 0.0)
        if self.name == "poly":
            q = 1.0 - zz * zz
            h = q**3
            d1 = -6.0 * zz * q**2
            d2 = -6.0 * q**2 + 24.0 * zz * zz * q
            return (np.where(inside, h, 0.0), np.where(inside, d1, 0.0), np.where(inside, d2, 0.0))
        if self.name == "cosine":
            c = 0.5 * (1.0 + np.cos(np.pi * zz))
            c1 = -0.5 * np.pi * np.sin(np.pi * zz)
            c2 = -0.5 * np.pi**2 * np.cos(np.pi * zz)
            return (np.where(inside, c * c, 0.0), np.where(inside, 2 * c * c1, 0.0),
                    np.where(inside, 2 * c1 * c1 + 2 * c * c2, 0.0))
        raise ValueError(f"unknown test function {self.name!r}")

    def derivatives(self, x):
        """``(g, g', g'')`` at ``x``."""
        w = self.width
        h, h1, h2 = self._profile(np.asarray(x, dtype=float) / w)
        return h, h1 / w, h2 / (w * w)

    def __call__(self, x):
        return self.derivatives(x)[0]


BUILTIN_TESTS = (SmoothTest("bump"), SmoothTest("poly"), SmoothTest("cosine"))


@dataclass(frozen=True)
class ProductTest:
    """``g(x_1, ..., x_k) = prod_l h_l(x_l)``."""

    factors: tuple

    @property
    def dim(self) -> int:
        return len(self.factors)

    def derivatives(self, x):
        """``g``, gradient ``(n, k)`` and Hessian diagonal ``(n, k)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        vals = [f.derivatives(x[:, l]) for l, f in enumerate(self.factors)]
        h = np.stack([v[0] for v in vals], axis=1)
        h1 = np.stack([v[1] for v in vals], axis=1)
        h2 = np.stack([v[2] for v in vals], axis=1)
        g = np.prod(h, axis=1)
        grad = np.empty_like(h)
        hess = np.empty_like(h)
        for l in range(h.shape[1]):
            others = np.prod(np.delete(h, l, axis=1), axis=1)
            grad[:, l] = h1[:, l] * others
            hess[:, l] = h2[:, l] * others
        return g, grad, hess

    def __call__(self, x):
        return self.derivatives(x)[0]


# ---------------------------------------------------------------------------
# generator residuals
# ---------------------------------------------------------------------------
def _mf_average(kernel: DriftKernel, t: float, y: np.ndarray, cloud: np.ndarray) -> np.ndarray:
    """``int b(t, y_i, z) m(dz)`` for each ``y_i`` with ``m`` the uniform cloud."""
    if kernel.is_affine:
        return kernel.a_x * y + kernel.a_y * np.mean(cloud) + kernel.c
    return kernel.mean_field(t, y, MeanFieldHandle.cloud(cloud))


def _trapezoid(values: np.ndarray, dt: float) -> float:
    if values.size < 2:
        return 0.0
    return float(dt * (values.sum() - 0.5 * (values[0] + values[-1])))


def generator_terms(joint: MeasureSeries, marginal: MeasureSeries, kernel: DriftKernel, u, g,
                    t: float) -> np.ndarray:
    """``A_s g`` at every grid time ``s <= t`` for 1-d ``g``."""
    u = as_weight(u)
    last = joint.index_of(t)
    if marginal.samples.shape[0] <= last:
        raise GridError("marginal series is shorter than the joint series")
    out = np.empty(last + 1)
    for k in range(last + 1):
        s = k * joint.dt
        pairs = joint.samples[k]
        y1, y2 = pairs[:, 0], pairs[:, 1]
        m = marginal.samples[k][:, 0]
        _, g1_pair, _ = g.derivatives(y1)
        _, g1_m, g2_m = g.derivatives(m)
        term = 0.0
        if u > 0:
            term += u * float(np.mean(kernel(s, y1, y2) * g1_pair))
        if u < 1:
            term += (1 - u) * float(np.mean(_mf_average(kernel, s, m, m) * g1_m))
        term += 0.5 * float(np.mean(g2_m))
        out[k] = term
    return out


def generator_residual(joint: MeasureSeries, marginal: MeasureSeries, kernel: DriftKernel, u, g,
                       t: float) -> float:
    """``<m_t, g> - <m_0, g> - int_0^t A_s g ds`` (trapezoid in time)."""
    last = joint.index_of(t)
    a = generator_terms(joint, marginal, kernel, u, g, t)
    m_t = float(np.mean(g(marginal.samples[last][:, 0])))
    m_0 = float(np.mean(g(marginal.samples[0][:, 0])))
    return m_t - m_0 - _trapezoid(a, joint.dt)


def generator_residual_k(joint_k: MeasureSeries, joint_k1: MeasureSeries, marginal: MeasureSeries,
                         kernel: DriftKernel, u, g: ProductTest, t: float) -> float:
    """Residual of the k-tuple equation.

    ``A g = u <M^(k+1), sum_l b(y_l, y_{l+1}) d_l g>
           + (1-u) <M^(k), sum_l int b(y_l, z) m(dz) d_l g>
           + 1/2 <M^(k), sum_l d_l^2 g>``.

    The mean-field term pairs each coordinate with an independent draw from
    ``m``, which is what Ito's formula gives for the finite system.
    """
    u = as_weight(u)
    k = joint_k.dim
    if k < 1 or joint_k1.dim != k + 1 or g.dim != k:
        raise ValueError("need k-tuples, (k+1)-tuples and a k-dimensional test function")
    last = joint_k.index_of(t)
    a = np.empty(last + 1)
    for i in range(last + 1):
        s = i * joint_k.dt
        big = joint_k1.samples[i]
        small = joint_k.samples[i]
        m = marginal.samples[i][:, 0]
        term = 0.0
        if u > 0:
            _, grad, _ = g.derivatives(big[:, :k])
            drift = kernel(s, big[:, :k], big[:, 1:])
            term += u * float(np.mean(np.sum(drift * grad, axis=1)))
        _, grad_s, hess_s = g.derivatives(small)
        if u < 1:
            mf = np.column_stack([_mf_average(kernel, s, small[:, l], m) for l in range(k)])
            term += (1 - u) * float(np.mean(np.sum(mf * grad_s, axis=1)))
        term += 0.5 * float(np.mean(np.sum(hess_s, axis=1)))
        a[i] = term
    end = float(np.mean(g(joint_k.samples[last])))
    start = float(np.mean(g(joint_k.samples[0])))
    return end - start - _trapezoid(a, joint_k.dt)


# ---------------------------------------------------------------------------
# fluctuation study: finite ring vs nested chain on shared noise
# ---------------------------------------------------------------------------
@dataclass
class FluctuationStudy:
    n_list: list
    statistic: np.ndarray
    stderr: np.ndarray
    slope: float
    bounded: bool

    def rows(self):
        for n, s, e in zip(self.n_list, self.statistic, self.stderr):
            yield int(n), float(s), float(e)


def coupled_fluctuation(n: int, kernel: DriftKernel, u, dt: float, horizon: float, seed: int,
                        top_depth: int = 30) -> float:
    """``(1/sqrt n) sum_i sup_s |X_{s,i} - Xbar_{s,i}|`` for one replication.

    ``X`` is the circular ring of ``n`` particles.  ``Xbar_1..Xbar_n`` is a
    nested stack in which level ``i`` uses the same increments as particle
    ``i``; level ``n+1`` is the ``Xtilde`` of an independent nested pair of
    depth ``top_depth`` (so ``(Xbar_n, Xbar_{n+1})`` is a limit pair).
    Mean-field terms use the exact law mean 0 for the linear kernel.
    """
    from .chain import ChainConfig, simulate_chain
    from .limit import simulate_levels
    from .rng import Domain, stream

    u = as_weight(u)
    ring = simulate_chain(ChainConfig(n=n, u=u, dt=dt, horizon=horizon, seed=seed), kernel)
    steps = ring.steps
    law = MeanFieldHandle.known_mean(0.0) if kernel.is_affine else None
    if law is None:
        raise ValueError("the coupled study uses the exact mean-field law of the linear kernel")
    # levels 0..n-1 share the ring's noise streams; levels n..n+top_depth are fresh
    ring_gens = [stream(seed, Domain.NOISE, i) for i in range(n)]
    top_gens = [stream(seed, Domain.LEVEL_NOISE, j) for j in range(top_depth + 1)]

    def noise(j, nb):
        g = ring_gens[j] if j < n else top_gens[j - n]
        return g.standard_normal((nb, 1))

    levels = n + top_depth + 1
    x0 = np.zeros((levels, 1))
    rec = simulate_levels(levels, 1, steps, dt, kernel, u, law, "independent_bm", noise, x0,
                          keep=range(n))
    bar = rec[:, 0, :]
    return float(np.sum(np.max(np.abs(ring.values - bar), axis=1)) / math.sqrt(n))


def fluctuation_study(kernel: DriftKernel, u, n_list=(50, 100, 200, 400), replications: int = 10,
                      dt: float = 0.01, horizon: float = 1.0, seed: int = 0,
                      factor: float = 1.5) -> FluctuationStudy:
    """Statistic per ``n`` (mean over replications), log-log slope and verdict."""
    from .rng import derive_seed

    stats, errs = [], []
    for n in n_list:
        vals = np.array([coupled_fluctuation(n, kernel, u, dt, horizon, derive_seed(seed, n, r))
                         for r in range(replications)])
        stats.append(vals.mean())
        errs.append(vals.std(ddof=1) / math.sqrt(replications) if replications > 1 else 0.0)
    stats = np.array(stats)
    errs = np.array(errs)
    if np.all(stats > 0):
        slope = float(np.polyfit(np.log(n_list), np.log(stats), 1)[0])
    else:
        slope = 0.0
    bounded = bool(np.all(stats <= factor * stats[0] + 1e-300))
    return FluctuationStudy(list(n_list), stats, errs, slope, bounded)
