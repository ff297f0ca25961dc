import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dchain.chain import (ChainConfig, InitialLaw, consecutive_tuples, shift_invariance_null_quantile,
                          shift_invariance_statistic, simulate_chain, step_chain)
from dchain.drift import DriftKernel
from dchain.ensemble import PathEnsemble
from dchain.errors import CapacityError, ConfigError, PropagationError
from dchain.measures import energy_distance_from_matrix, pairwise_distances
from dchain.oracle import stationary_variance, variance_u1_closed
from dchain.rng import Domain, stream

from conftest import var_stderr


def batch_var_stderr(x: np.ndarray, batches: int = 50) -> float:
    """Batch-means standard error for the variance of a ring sample (neighbours correlate)."""
    parts = np.array_split(x - x.mean(), batches)
    v = np.array([np.mean(p ** 2) for p in parts])
    return float(v.std(ddof=1) / math.sqrt(batches))


# -- step_chain examples -------------------------------------------------------
def test_single_particle_is_brownian(mean_revert):
    out = step_chain([1.5], mean_revert, 0.3, 0.0, 0.04, [0.7])
    assert out[0] == 1.5 + 0.2 * 0.7


def test_two_particle_hand_step(mean_revert):
    out = step_chain([1.0, 0.0], mean_revert, 1.0, 0.0, 0.1, [0.0, 0.0])
    np.testing.assert_allclose(out, [0.9, 0.1], rtol=0, atol=1e-15)


def test_equal_state_u0_unchanged(mean_revert):
    out = step_chain([2.0, 2.0, 2.0], mean_revert, 0.0, 0.0, 0.1, np.zeros(3))
    np.testing.assert_array_equal(out, [2.0, 2.0, 2.0])


def test_exclude_self_pair(mean_revert):
    # with n=2 and the self term dropped, the empirical term is -(x_i - x_j)/2
    out = step_chain([1.0, -1.0], mean_revert, 0.0, 0.0, 0.1, np.zeros(2), exclude_self=True)
    np.testing.assert_allclose(out, [0.9, -0.9], atol=1e-15)


def test_non_finite_reports_index(mean_revert):
    with pytest.raises(PropagationError) as err:
        step_chain([0.0, 1.0, np.nan, np.inf], mean_revert, 0.5, 0.0, 0.1, np.zeros(4))
    assert err.value.index == 2


def test_zero_kernel_zero_noise_keeps_state():
    k = DriftKernel.zero()
    x = np.array([0.3, -2.0, 5.0])
    y = x
    for _ in range(20):
        y = step_chain(y, k, 0.4, 0.0, 0.01, np.zeros(3))
    np.testing.assert_array_equal(y, x)


def test_non_affine_matches_affine_path():
    xs = np.linspace(-30, 30, 61)
    vals = -(xs[:, None] - xs[None, :])
    tab = DriftKernel.tabulated(xs, xs, vals)
    rng = np.random.default_rng(0)
    x = rng.normal(size=50)
    z = rng.normal(size=50)
    for excl in (False, True):
        a = step_chain(x, tab, 0.4, 0.0, 0.01, z, excl)
        b = step_chain(x, DriftKernel.mean_revert(), 0.4, 0.0, 0.01, z, excl)
        np.testing.assert_allclose(a, b, atol=1e-12)


# -- simulate_chain ------------------------------------------------------------
def test_u0_variance_matches_ou(mean_revert):
    ens = simulate_chain(ChainConfig(n=10_000, u=0.0, horizon=1.0, seed=101), mean_revert)
    x = ens.at(1.0)
    target = (1 - math.exp(-2.0)) / 2
    assert abs(x.var() - target) < 3 * var_stderr(x)


def test_zero_kernel_gives_brownian_variance():
    ens = simulate_chain(ChainConfig(n=10_000, u=0.5, horizon=2.0, seed=5), DriftKernel.zero())
    for t in (0.5, 2.0):
        x = ens.at(t)
        assert abs(x.var() - t) < 3 * var_stderr(x)


def test_u1_variance_matches_bessel_oracle(mean_revert):
    ens = simulate_chain(ChainConfig(n=5000, u=1.0, horizon=5.0, seed=17, record_stride=50),
                         mean_revert)
    x = ens.at(5.0)
    assert abs(x.var() - variance_u1_closed(5.0)) < 3 * batch_var_stderr(x)


@pytest.mark.parametrize("u", [0.0, 0.5, 0.9])
def test_second_moment_stable(mean_revert, u):
    ens = simulate_chain(ChainConfig(n=2000, u=u, horizon=15.0, seed=9, record_stride=100),
                         mean_revert)
    assert np.mean(ens.at(15.0) ** 2) <= 2 * stationary_variance(u)


def test_determinism(mean_revert):
    cfg = ChainConfig(n=64, u=0.7, horizon=0.5, seed=42,
                      initial_law=InitialLaw.gaussian(0.0, 1.0))
    a = simulate_chain(cfg, mean_revert)
    b = simulate_chain(cfg, mean_revert)
    assert a.values.tobytes() == b.values.tobytes()


def test_particle_streams_are_per_index(mean_revert):
    # with u=1 and the zero kernel each particle only sees its own stream
    k = DriftKernel.zero()
    a = simulate_chain(ChainConfig(n=8, u=1.0, horizon=0.1, seed=4), k)
    b = simulate_chain(ChainConfig(n=8, u=1.0, horizon=0.1, seed=4, stream_offset=3), k)
    np.testing.assert_array_equal(a.values[3:], b.values[:5])


def test_capacity_error_reports_bytes(mean_revert):
    cfg = ChainConfig(n=1000, u=0.5, horizon=1.0, memory_budget=1000)
    with pytest.raises(CapacityError) as err:
        simulate_chain(cfg, mean_revert)
    assert err.value.required_bytes == 8 * 1000 * 101


def test_config_validation():
    with pytest.raises(ConfigError):
        ChainConfig(n=0, u=0.5)
    with pytest.raises(ConfigError):
        ChainConfig(n=5, u=0.5, dt=2.0, horizon=1.0)


def test_initial_laws(tmp_path):
    p = tmp_path / "x0.txt"
    p.write_text("# samples\n1.0\n2.0\n3.0\n")
    law = InitialLaw.from_file(p)
    x = law.draw(0, np.arange(200))
    assert set(np.unique(x)) <= {1.0, 2.0, 3.0}
    # value k depends only on its own index
    np.testing.assert_array_equal(law.draw(0, [5, 9]), x[[5, 9]])
    g = InitialLaw.gaussian(1.0, 4.0).draw(1, np.arange(4000))
    assert abs(g.mean() - 1.0) < 3 * 2 / math.sqrt(4000)


# -- shift invariance ----------------------------------------------------------
def test_consecutive_tuples_wrap():
    v = np.arange(5.0)
    np.testing.assert_array_equal(consecutive_tuples(v, 2, 1), [[1, 2], [3, 4]])
    np.testing.assert_array_equal(consecutive_tuples(v, 3, 0), [[0, 1, 2], [2, 3, 4], [4, 0, 1]])


def test_shift_statistic_constant_is_zero():
    ens = PathEnsemble(np.full((40, 3), 2.5), 0.5)
    assert shift_invariance_statistic(ens, 2, 1.0) == 0.0


def test_shift_statistic_iid_vs_adversarial():
    rng = stream(8, Domain.MISC, 0)
    vals = np.zeros((400, 2))
    vals[:, 1] = rng.standard_normal(400)
    ens = PathEnsemble(vals, 1.0)
    q = shift_invariance_null_quantile(ens, 2, 1.0, q=0.99, n_perm=200, seed=1)
    assert shift_invariance_statistic(ens, 2, 1.0) < q
    bad = vals.copy()
    bad[1::2, 1] += 10.0
    adv = PathEnsemble(bad, 1.0)
    q_adv = shift_invariance_null_quantile(adv, 2, 1.0, q=0.99, n_perm=200, seed=1)
    assert shift_invariance_statistic(adv, 2, 1.0) > q_adv


def test_exchange_symmetry_under_relabeling(mean_revert):
    """Relabelled noise streams give a statistically indistinguishable 2-tuple law."""
    a = simulate_chain(ChainConfig(n=300, u=0.8, horizon=1.0, seed=3), mean_revert).at(1.0)
    b = simulate_chain(ChainConfig(n=300, u=0.8, horizon=1.0, seed=3, stream_offset=1),
                       mean_revert).at(1.0)
    ta = consecutive_tuples(a, 2, 0)
    tb = consecutive_tuples(b, 2, 1)
    pooled = np.vstack([ta, tb])
    D = pairwise_distances(pooled)
    mask = np.zeros(len(pooled), dtype=bool)
    mask[:len(ta)] = True
    observed = energy_distance_from_matrix(D, mask)
    rng = stream(0, Domain.MISC, 2)
    null = []
    for _ in range(200):
        m = np.zeros(len(pooled), dtype=bool)
        m[rng.permutation(len(pooled))[:len(ta)]] = True
        null.append(energy_distance_from_matrix(D, m))
    assert observed < np.quantile(null, 0.99)


@given(n=st.integers(1, 30), k=st.integers(1, 4), start=st.integers(0, 1))
def test_tuple_rows_are_consecutive(n, k, start):
    v = np.arange(float(n))
    rows = consecutive_tuples(v, k, start)
    assert rows.shape == (len(range(start, n, 2)), k)
    assert np.all((rows[:, 1:] - rows[:, :-1]) % n == 1 % n) if k > 1 else True
