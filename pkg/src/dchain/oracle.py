"""Closed-form references for the linear Gaussian chain.

With the mean-reverting kernel ``b(x, y) = -(x - y)`` and zero initial
values, the limit pair is Gaussian and

    Var X_t = int_0^t exp(-2v) I_0(2uv) dv.

Everything here is deterministic except the Feynman-Kac and discrete-time
samplers, which exist to cross-check the formulas by simulation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drift import as_weight
from .errors import AccuracyError, DomainError
from .rng import Domain, stream

CROSSOVER = 15.0
_EPS = 2.0**-53


# ---------------------------------------------------------------------------
# modified Bessel functions I_0, I_1
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BesselEval:
    nu: int
    x: float
    value: float
    method: str
    abs_error: float


def _series_scaled(nu: int, x: float) -> tuple[float, float]:
    h = 0.5 * x
    term = h if nu == 1 else 1.0
    total = term
    k = 0
    while True:
        k += 1
        term *= h * h / (k * (k + nu))
        total += term
        if term <= _EPS * total * 0.01:
            break
    scale = math.exp(-x)
    # terms are all positive: error is round-off in ~k additions
    return total * scale, 4 * k * _EPS * total * scale


def _asymptotic_terms(nu: int, x: float) -> list[float]:
    """Terms ``(-1)^k a_k(nu) / x^k`` up to the smallest one."""
    mu = 4.0 * nu * nu
    terms = [1.0]
    a = 1.0
    k = 0
    while True:
        k += 1
        a_next = -a * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if abs(a_next) >= abs(a) or k > 200:
            break
        a = a_next
        terms.append(a)
        if abs(a) < 1e-18:
            break
    return terms


def _asymptotic_scaled(nu: int, x: float) -> tuple[float, float]:
    terms = _asymptotic_terms(nu, x)
    pref = 1.0 / math.sqrt(2.0 * math.pi * x)
    s = math.fsum(terms)
    return pref * s, pref * (abs(terms[-1]) + 8 * _EPS * abs(s))


def bessel_eval(nu: int, x: float, method: str | None = None) -> BesselEval:
    """Scaled value ``exp(-x) I_nu(x)`` with method and error estimate."""
    if nu not in (0, 1):
        raise DomainError(f"only orders 0 and 1 are supported, got {nu}")
    x = float(x)
    if not x >= 0:
        raise DomainError(f"argument must be >= 0, got {x}")
    if method is None:
        method = "series" if x <= CROSSOVER else "asymptotic-scaled"
    if method == "series":
        v, e = _series_scaled(nu, x)
    elif method == "asymptotic-scaled":
        if x == 0:
            raise DomainError("asymptotic expansion needs x > 0")
        v, e = _asymptotic_scaled(nu, x)
    else:
        raise ValueError(f"unknown method {method!r}")
    return BesselEval(nu, x, v, method, e)


def bessel_i_scaled(nu: int, x, method: str | None = None):
    """``exp(-x) I_nu(x)``; accepts scalars or arrays."""
    if np.ndim(x) == 0:
        return bessel_eval(nu, float(x), method).value
    flat = np.asarray(x, dtype=float).ravel()
    return np.array([bessel_eval(nu, v, method).value for v in flat]).reshape(np.shape(x))


def bessel_i(nu: int, x, method: str | None = None):
    """``I_nu(x)`` for ``nu`` in {0, 1}; overflows to inf past x ~ 713."""
    def one(v):
        s = bessel_eval(nu, float(v), method).value
        with np.errstate(over="ignore"):
            return s * math.exp(v) if v < 709 else (math.inf if s > 0 else 0.0)
    if np.ndim(x) == 0:
        return one(x)
    return np.array([one(v) for v in np.ravel(x)]).reshape(np.shape(x))


def log_bessel_i(nu: int, x: float) -> float:
    s = bessel_eval(nu, x).value
    return math.log(s) + x if s > 0 else -math.inf


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------
def adaptive_simpson(f, a: float, b: float, tol: float = 1e-9, max_depth: int = 40,
                     min_depth: int = 3) -> tuple[float, float]:
    """Adaptive Simpson rule with Richardson correction.

    Returns ``(value, error_estimate)``.  Raises :class:`AccuracyError` when
    an interval cannot be resolved within ``max_depth`` bisections.
    """
    if b == a:
        return 0.0, 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) * (fa + 4 * fm + fb) / 6
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = []
    err = 0.0
    failed = False
    while stack:
        lo, hi, flo, fmid, fhi, s, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        fl, fr = f(0.5 * (lo + mid)), f(0.5 * (mid + hi))
        left = (mid - lo) * (flo + 4 * fl + fmid) / 6
        right = (hi - mid) * (fmid + 4 * fr + fhi) / 6
        delta = left + right - s
        if depth >= min_depth and (abs(delta) <= 15 * eps or depth >= max_depth):
            if abs(delta) > 15 * eps:
                failed = True
            total.append(left + right + delta / 15)
            err += abs(delta) / 15
            continue
        stack.append((mid, hi, fmid, fr, fhi, right, 0.5 * eps, depth + 1))
        stack.append((lo, mid, flo, fl, fmid, left, 0.5 * eps, depth + 1))
    value = math.fsum(total)
    if failed or not math.isfinite(value):
        raise AccuracyError(f"adaptive Simpson did not reach tol={tol}", err)
    return sign * value, err


# ---------------------------------------------------------------------------
# variances and covariances
# ---------------------------------------------------------------------------
@dataclass
class OracleCurve:
    """Tabulated closed-form values on a grid of times."""

    t: np.ndarray
    values: np.ndarray
    u: float
    kind: str = "variance"
    tolerance: float = 1e-9
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def rows(self):
        for t, v in zip(self.t, self.values):
            yield float(t), float(v)


def _var_integrand(u: float):
    # exp(-2v) I0(2uv) = exp(-2v(1-u)) * scaled I0(2uv)
    def f(v):
        z = 2.0 * u * v
        return math.exp(-2.0 * v + z) * bessel_eval(0, z).value
    return f


def variance_u(t: float, u, tol: float = 1e-9) -> float:
    """``int_0^t exp(-2v) I_0(2uv) dv`` by adaptive quadrature."""
    u = as_weight(u)
    if t < 0:
        raise DomainError("t must be >= 0")
    value, _ = adaptive_simpson(_var_integrand(u), 0.0, float(t), tol)
    return value


def variance_u0_closed(t: float) -> float:
    return -0.5 * math.expm1(-2.0 * t)


def variance_u1_closed(t: float) -> float:
    """``t exp(-2t) (I_0(2t) + I_1(2t))`` via scaled Bessel values."""
    if t == 0:
        return 0.0
    return t * (bessel_eval(0, 2 * t).value + bessel_eval(1, 2 * t).value)


def variance_curve(ts, u, tol: float = 1e-9) -> OracleCurve:
    ts = np.asarray(ts, dtype=float)
    u = as_weight(u)
    vals = np.empty(ts.size)
    errs = np.empty(ts.size)
    f = _var_integrand(u)
    order = np.argsort(ts, kind="stable")
    # integrate between consecutive grid points; the integrand is positive,
    # so the cumulative sums are nondecreasing in t by construction
    prev, acc, err = 0.0, [], 0.0
    for i in order:
        t = float(ts[i])
        if t < 0:
            raise DomainError("t must be >= 0")
        piece, e = adaptive_simpson(f, prev, t, tol / max(1, ts.size)) if t > prev else (0.0, 0.0)
        acc.append(piece)
        err += abs(e)
        vals[i], errs[i] = math.fsum(acc), err
        prev = max(prev, t)
    return OracleCurve(ts, vals, u, "variance", tol, errs)


def stationary_variance(u) -> float:
    """``1 / (2 sqrt(1 - u^2))``; diverges at ``u = 1``."""
    u = as_weight(u)
    if u >= 1.0:
        raise DomainError("variance grows like sqrt(t) at u = 1; no stationary value")
    return 1.0 / (2.0 * math.sqrt(1.0 - u * u))


def autocov(s: float, t: float, u, tol: float = 1e-7) -> float:
    """``E[X_s X_t]`` for ``0 <= s <= t``."""
    u = as_weight(u)
    if not 0 <= s <= t:
        raise DomainError(f"autocov needs 0 <= s <= t, got s={s}, t={t}")
    lag = t - s

    def f(v):
        z = 2.0 * u * math.sqrt((lag + v) * v)
        return math.exp(-2.0 * v + z) * bessel_eval(0, z).value

    value, _ = adaptive_simpson(f, 0.0, float(s), tol)
    return math.exp(-lag) * value


def _autocov_sym(a: float, b: float, u: float, tol: float) -> float:
    return autocov(a, b, u, tol) if a <= b else autocov(b, a, u, tol)


def crosscov(s: float, t: float, u, tol: float = 1e-7) -> float:
    """``E[X_s Xtilde_t] = u int_0^s exp(-(s-v)) E[X_v X_t] dv``."""
    u = as_weight(u)
    if s < 0 or t < 0:
        raise DomainError("times must be >= 0")
    if u == 0.0 or s == 0.0:
        return 0.0
    inner_tol = tol / max(1.0, 4.0 * s)

    def f(v):
        return math.exp(-(s - v)) * _autocov_sym(v, t, u, inner_tol)

    value, _ = adaptive_simpson(f, 0.0, float(s), tol / u)
    return u * value


def log_repulsive_variance(t: float) -> float:
    """``log(t exp(2t) (I_0(2t) - I_1(2t)))``."""
    if t < 0:
        raise DomainError("t must be >= 0")
    if t == 0:
        return -math.inf
    x = 2.0 * t
    if x <= CROSSOVER:
        d = bessel_eval(0, x).value - bessel_eval(1, x).value
    else:
        # subtract the two asymptotic series term by term to avoid cancellation
        t0, t1 = _asymptotic_terms(0, x), _asymptotic_terms(1, x)
        m = min(len(t0), len(t1))
        d = math.fsum(a - b for a, b in zip(t0[:m], t1[:m])) / math.sqrt(2.0 * math.pi * x)
    return math.log(t) + 2.0 * x + math.log(d)


def repulsive_variance(t: float) -> float:
    """``t exp(2t) (I_0(2t) - I_1(2t))``; returns inf once it overflows."""
    if t == 0:
        return 0.0
    lv = log_repulsive_variance(t)
    return math.exp(lv) if lv < 709.0 else math.inf


# ---------------------------------------------------------------------------
# taboo kernel and Feynman-Kac sampling
# ---------------------------------------------------------------------------
def taboo_kernel(k: int, t: float, u) -> float:
    """``(ut)^k exp(-t) / k!``: probability that the killed chain sits at k."""
    u = as_weight(u)
    if k < 0 or t < 0:
        raise DomainError("need k >= 0 and t >= 0")
    if k == 0:
        return math.exp(-t)
    if u == 0.0 or t == 0.0:
        return 0.0
    return math.exp(k * math.log(u * t) - t - math.lgamma(k + 1))


def taboo_generator(size: int, u) -> np.ndarray:
    """Truncated generator: -1 on the diagonal, u on the superdiagonal."""
    u = as_weight(u)
    return -np.eye(size) + u * np.eye(size, k=1)


def taboo_levels(t: float, u, tail: float = 1e-16) -> int:
    """Number of levels carrying all but ``tail`` of the taboo mass on [0, t]."""
    lam = as_weight(u) * t
    k = 1
    while True:
        # P(Poisson(lam) >= k) bounds the mass at levels >= k for every r <= t
        if lam == 0 or _poisson_tail(k, lam) < tail:
            return k
        k += 1


def _poisson_tail(k: int, lam: float) -> float:
    term = math.exp(-lam)
    cdf = 0.0
    for j in range(k):
        cdf += term
        term *= lam / (j + 1)
    # summing the tail directly is stable where 1 - cdf is not
    tail = 0.0
    j = k
    while term > 1e-300:
        tail += term
        j += 1
        term *= lam / j
        if j > k + 10 * (lam + 10):
            break
    return tail


def _cell_weights(t: float, u: float, cells: int, levels: int):
    """Per-level, per-cell ``h c_{kj}`` (mean kernel) and ``int p^2`` over the cell."""
    edges = np.linspace(0.0, t, cells + 1)
    mean_w = np.empty((levels, cells))
    sq_w = np.empty((levels, cells))
    for k in range(levels):
        for j in range(cells):
            lo, hi = t - edges[j + 1], t - edges[j]
            mean_w[k, j], _ = adaptive_simpson(lambda r: taboo_kernel(k, r, u), lo, hi, 1e-14)
            sq_w[k, j], _ = adaptive_simpson(lambda r: taboo_kernel(k, r, u) ** 2, lo, hi, 1e-14)
    return edges, mean_w, sq_w


def feynman_kac_samples(t: float, u, size: int, seed: int, cells: int = 32,
                        method: str = "kernel", chains: int = 256) -> np.ndarray:
    """Draws of ``Xtilde_t`` from the Feynman-Kac representation.

    Level ``k`` carries its own Brownian motion, sampled as increments on
    ``cells`` equal cells.  With ``method="kernel"`` the cell coefficients
    are the exact cell averages of the taboo kernel, and the part of each
    stochastic integral orthogonal to the increments is added as an
    independent normal, so draws are exactly Gaussian with the right
    variance.  With ``method="chain"`` the coefficients are occupation
    times of ``chains`` simulated killed chains (the expectation over the
    chain replaced by an average), which inflates the variance by O(1/chains).
    """
    u = as_weight(u)
    if t == 0:
        return np.zeros(size)
    levels = taboo_levels(t, u)
    h = t / cells
    out = np.empty(size)
    if method == "kernel":
        _, mean_w, sq_w = _cell_weights(t, u, cells, levels)
        coef = mean_w / h
        resid_var = np.maximum(sq_w - coef**2 * h, 0.0).sum()
        for i in range(size):
            g = stream(seed, Domain.FEYNMAN_KAC, i)
            dw = g.standard_normal((levels, cells)) * math.sqrt(h)
            out[i] = float(np.sum(coef * dw)) + math.sqrt(resid_var) * g.standard_normal()
        return out
    if method != "chain":
        raise ValueError(f"unknown method {method!r}")
    edges = np.linspace(0.0, t, cells + 1)
    for i in range(size):
        g = stream(seed, Domain.FEYNMAN_KAC, i)
        dw = g.standard_normal((levels + 64, cells)) * math.sqrt(h)
        occ = killed_chain_occupation(t, u, chains, g, edges, levels + 64)
        out[i] = float(np.sum(occ.mean(axis=0) / h * dw))
    return out


def feynman_kac_sample(t: float, u, seed: int, index: int = 0, **kw) -> float:
    """One draw of ``Xtilde_t``; ``index`` selects the stream."""
    return float(feynman_kac_samples(t, u, index + 1, seed, **kw)[index])


def killed_chain_occupation(t: float, u: float, chains: int, rng: np.random.Generator,
                            edges: np.ndarray, levels: int) -> np.ndarray:
    """Time each chain spends at level k with ``t - r`` in each cell.

    Returns shape ``(chains, levels, cells)``.  The chain starts at 0, holds
    for Exp(1), then moves up with probability u or is killed.
    """
    cells = edges.size - 1
    occ = np.zeros((chains, levels, cells))
    start = np.zeros(chains)
    alive = np.ones(chains, dtype=bool)
    for k in range(levels):
        if not alive.any():
            break
        hold = rng.exponential(1.0, chains)
        end = start + hold
        lo_s = np.clip(t - np.minimum(end, t), 0, t)     # occupation in s = t - r
        hi_s = np.clip(t - start, 0, t)
        ov = np.clip(np.minimum(hi_s[:, None], edges[None, 1:]) - np.maximum(lo_s[:, None], edges[None, :-1]), 0, None)
        occ[:, k, :] = np.where(alive[:, None], ov, 0.0)
        up = rng.random(chains) < u
        alive &= up & (end < t)
        start = end
    return occ


def feynman_kac_variance(t: float, u, pairs: int, seed: int) -> tuple[float, float]:
    """Variance of ``Xtilde_t`` as expected overlap time of two killed chains.

    ``Var = sum_k int p_{0k}(r)^2 dr = E[time in [0, t] both independent
    chains are alive and at the same level]``.  Returns ``(mean, se)``.
    """
    u = as_weight(u)
    g = stream(seed, Domain.FEYNMAN_KAC, 0, sub=1)
    tot = np.zeros(pairs)
    a0 = np.zeros(pairs)
    b0 = np.zeros(pairs)
    for _ in range(10_000):
        a1 = a0 + g.exponential(1.0, pairs)
        b1 = b0 + g.exponential(1.0, pairs)
        with np.errstate(invalid="ignore"):
            both = np.clip(np.minimum(np.minimum(a1, b1), t) - np.maximum(a0, b0), 0, None)
        alive_a = np.isfinite(a0)
        alive_b = np.isfinite(b0)
        tot += np.where(alive_a & alive_b, both, 0.0)
        # advance: a chain is killed (start -> inf) with prob 1 - u at its jump
        a0 = np.where(g.random(pairs) < u, a1, np.inf)
        b0 = np.where(g.random(pairs) < u, b1, np.inf)
        if not np.any(np.maximum(a0, b0) < t):
            break
    return float(tot.mean()), float(tot.std(ddof=1) / math.sqrt(pairs))


# ---------------------------------------------------------------------------
# discrete-time analogue
# ---------------------------------------------------------------------------
def _check_a(a: float) -> None:
    if not 0.0 < a < 1.0:
        raise DomainError(f"a must lie in (0, 1), got {a}")


def discrete_coefficients(n: int, a: float, u) -> np.ndarray:
    """``c[k, l] = C(k, l) u^l (1-a)^l a^(k-l)`` for ``0 <= l <= k < n``."""
    _check_a(a)
    u = as_weight(u)
    c = np.zeros((n, n))
    for k in range(n):
        for l in range(k + 1):
            if u == 0.0 and l > 0:
                continue
            lu = l * math.log(u) if l else 0.0
            logc = (math.lgamma(k + 1) - math.lgamma(l + 1) - math.lgamma(k - l + 1)
                    + lu + l * math.log1p(-a) + (k - l) * math.log(a))
            c[k, l] = math.exp(logc)
    return c


def discrete_second_moment(n: int, a: float, u) -> float:
    """``E[X_n^2] = sum_k sum_l C(k,l)^2 u^(2l) (1-a)^(2l) a^(2(k-l))``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    c = discrete_coefficients(n, a, u)
    return math.fsum((c * c).ravel())


def simulate_discrete(n: int, a: float, u, size: int, seed: int, return_se: bool = False):
    """Sample second moment of ``X_n`` from the binomial-kernel representation."""
    c = discrete_coefficients(n, a, u)
    g = stream(seed, Domain.DISCRETE, 0)
    acc = []
    chunk = max(1, 2_000_000 // (n * n))
    done = 0
    while done < size:
        m = min(chunk, size - done)
        eps = g.standard_normal((m, n, n))          # eps[:, k, l] plays eps_{n-k, l}
        acc.append(np.einsum("mkl,kl->m", eps, c))
        done += m
    x = np.concatenate(acc)
    sq = x * x
    if return_se:
        return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(size))
    return float(sq.mean())


def simulate_discrete_recursion(n: int, a: float, u, size: int, seed: int, depth: int | None = None):
    """``X_n`` from the recursion ``X_k = a X_{k-1} + (1-a) u Xtilde_{k-1} + eps_k``.

    The tilde copy is realised by a nested chain of ``depth`` levels, each
    driven by its own noise; level ``depth`` has no successor.  Depth ``n``
    is exact for ``X_n``.
    """
    _check_a(a)
    u = as_weight(u)
    depth = n if depth is None else depth
    g = stream(seed, Domain.DISCRETE, 1)
    x = np.zeros((size, depth + 1))
    for _ in range(n):
        eps = g.standard_normal((size, depth + 1))
        nxt = np.zeros_like(x)
        nxt[:, :-1] = a * x[:, :-1] + (1 - a) * u * x[:, 1:]
        nxt[:, -1] = a * x[:, -1]
        x = nxt + eps
    return x[:, 0]


def hyp2f1_terminating(k: int, z: float) -> float:
    """``2F1(-k, -k; 1; z)`` by its terminating series."""
    term = 1.0
    total = 1.0
    for l in range(k):
        term *= (-k + l) * (-k + l) / ((1 + l) * (l + 1)) * z
        total += term
    return total


def discrete_second_moment_hyp2f1(n: int, a: float, u) -> float:
    """Same double sum written as ``sum_k a^(2k) 2F1(-k,-k;1;(u(1-a)/a)^2)``."""
    _check_a(a)
    u = as_weight(u)
    z = (u * (1 - a) / a) ** 2
    return math.fsum(a ** (2 * k) * hyp2f1_terminating(k, z) for k in range(n))


def discrete_second_moment_literal(n: int, a: float, u) -> float:
    """``sum_k u^k (1-a)^k 2F1(-k,-k;1;a^2/(1-a)^2)``, the form as printed.

    Kept only so tests can document that it differs from the double sum.
    """
    _check_a(a)
    z = a * a / (1 - a) ** 2
    return math.fsum((u * (1 - a)) ** k * hyp2f1_terminating(k, z) for k in range(n))
