import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dchain.drift import (DriftKernel, MeanFieldHandle, MixtureWeight, as_weight, centered_kernel,
                          eval_kernel, eval_mixed_drift, kernel_from_spec)
from dchain.errors import DomainError, InvalidLawError

reals = st.floats(-50, 50, allow_nan=False)
weights = st.floats(0, 1)


# -- examples ---------------------------------------------------------------
def test_mean_revert_examples(mean_revert):
    assert eval_kernel(mean_revert, 0.0, 2.0, 5.0) == 3.0
    assert eval_kernel(mean_revert, 0.0, 7.0, 7.0) == 0.0


def test_repulsive_example():
    assert eval_kernel(DriftKernel.repulsive(), 0.0, 1.0, 0.0) == 1.0


def test_mixed_drift_examples(mean_revert):
    m0 = MeanFieldHandle.known_mean(0.0)
    assert eval_mixed_drift(mean_revert, 0.0, 3.0, 3.0, None, 1.0) == 0.0
    assert eval_mixed_drift(mean_revert, 0.0, 1.0, 123.0, m0, 0.0) == -1.0
    assert eval_mixed_drift(mean_revert, 0.0, 0.0, 2.0, m0, 0.5) == 1.0


def test_mixed_drift_needs_law_below_one(mean_revert):
    with pytest.raises(InvalidLawError):
        eval_mixed_drift(mean_revert, 0.0, 1.0, 0.0, None, 0.5)
    with pytest.raises(InvalidLawError):
        MeanFieldHandle.cloud([])


def test_centered_kernel_examples(mean_revert):
    atom = MeanFieldHandle.cloud([2.5])
    for k in (mean_revert, DriftKernel.repulsive(), DriftKernel.affine(0.3, -1.2, 0.7)):
        assert centered_kernel(k, 0.0, -1.0, 2.5, atom) == 0.0
    assert centered_kernel(mean_revert, 0.0, 4.2, 1.0, MeanFieldHandle.known_mean(0.0)) == 1.0


def test_centering_identity(mean_revert):
    rng = np.random.default_rng(0)
    z = rng.normal(size=500)
    w = rng.random(500)
    w /= w.sum()
    law = MeanFieldHandle.cloud(z, w)
    vals = centered_kernel(mean_revert, 0.0, 0.3, z, law)
    assert abs(np.dot(w, vals)) < 1e-13


def test_weight_validation():
    assert as_weight(MixtureWeight(0.25)) == 0.25
    for bad in (-0.1, 1.5, float("nan")):
        with pytest.raises(DomainError):
            as_weight(bad)


# -- tabulated kernels --------------------------------------------------------
def _table():
    xs = np.linspace(-2, 2, 9)
    ys = np.linspace(-3, 3, 13)
    vals = np.sin(xs)[:, None] * np.cos(ys)[None, :] + 0.5 * xs[:, None] - 0.2 * ys[None, :]
    return xs, ys, vals


def test_tabulated_exact_on_nodes_and_bilinear():
    xs, ys, vals = _table()
    k = DriftKernel.tabulated(xs, ys, vals)
    assert k(0.0, xs[3], ys[5]) == pytest.approx(vals[3, 5], abs=1e-15)
    # midpoint of a cell is the average of its four corners
    x = 0.5 * (xs[2] + xs[3])
    y = 0.5 * (ys[7] + ys[8])
    expect = 0.25 * (vals[2, 7] + vals[3, 7] + vals[2, 8] + vals[3, 8])
    assert k(0.0, x, y) == pytest.approx(expect, abs=1e-14)


def test_tabulated_refuses_extrapolation():
    k = DriftKernel.tabulated(*_table())
    with pytest.raises(DomainError):
        k(0.0, 2.5, 0.0)
    with pytest.raises(DomainError):
        k(0.0, 0.0, -3.01)


def test_tabulated_csv_roundtrip(tmp_path):
    k = DriftKernel.tabulated(*_table())
    p = tmp_path / "k.csv"
    k.to_csv(p)
    assert p.read_text().splitlines()[0] == "x,y,value"
    k2 = DriftKernel.from_csv(p)
    pts = np.random.default_rng(1).uniform([-2, -3], [2, 3], size=(200, 2))
    np.testing.assert_array_equal(k(0, pts[:, 0], pts[:, 1]), k2(0, pts[:, 0], pts[:, 1]))
    assert kernel_from_spec(f"tabulated:{p}").lipschitz_constant == k.lipschitz_constant


def test_tabulated_rejects_bad_grids(tmp_path):
    with pytest.raises(DomainError):
        DriftKernel.tabulated([0, 0, 1], [0, 1], np.zeros((3, 2)))
    p = tmp_path / "bad.csv"
    p.write_text("x,y,value\n0,0,1\n0,1,2\n1,0,3\n")
    with pytest.raises(DomainError):
        DriftKernel.from_csv(p)


def test_kernel_specs():
    assert kernel_from_spec("linear_mean_revert")(0, 1.0, 0.0) == -1.0
    assert kernel_from_spec("affine:1,2,3")(0, 1.0, 1.0) == 6.0
    assert kernel_from_spec("zero").is_zero
    with pytest.raises(DomainError):
        kernel_from_spec("quadratic")


# -- properties ---------------------------------------------------------------
@given(x=reals, nb=reals, m=reals, u=weights)
def test_linear_mixed_drift_closed_form(x, nb, m, u):
    k = DriftKernel.mean_revert()
    got = eval_mixed_drift(k, 0.0, x, nb, MeanFieldHandle.known_mean(m), u)
    assert got == pytest.approx(-(x - (u * nb + (1 - u) * m)), rel=1e-12, abs=1e-12)


@given(x=reals, nb=reals, u=weights, seed=st.integers(0, 2**31))
def test_mixed_drift_is_convex_combination(x, nb, u, seed):
    k = DriftKernel.affine(-0.7, 1.3, 0.2)
    cloud = MeanFieldHandle.cloud(np.random.default_rng(seed).normal(size=20))
    lo = eval_mixed_drift(k, 0.0, x, nb, cloud, 0.0)
    hi = eval_mixed_drift(k, 0.0, x, nb, cloud, 1.0)
    assert hi == eval_kernel(k, 0.0, x, nb)
    mid = eval_mixed_drift(k, 0.0, x, nb, cloud, u)
    tol = 1e-12 * (1 + abs(lo) + abs(hi))
    assert min(lo, hi) - tol <= mid <= max(lo, hi) + tol


@given(seed=st.integers(0, 2**31))
def test_random_lipschitz_quotients(seed):
    rng = np.random.default_rng(seed)
    kernels = [DriftKernel.mean_revert(), DriftKernel.repulsive(),
               DriftKernel.affine(*rng.normal(size=3)), DriftKernel.tabulated(*_table())]
    for k in kernels:
        a = rng.uniform([-2, -3], [2, 3], size=(50, 2))
        b = rng.uniform([-2, -3], [2, 3], size=(50, 2))
        diff = np.abs(k(0, a[:, 0], a[:, 1]) - k(0, b[:, 0], b[:, 1]))
        bound = k.lipschitz_constant * (np.abs(a[:, 0] - b[:, 0]) + np.abs(a[:, 1] - b[:, 1]))
        assert np.all(diff <= bound * (1 + 1e-12) + 1e-15)


def test_growth_bound_affine():
    k = DriftKernel.affine(-1.0, 1.0, 0.5)
    x = np.linspace(-10, 10, 41)
    y = x[::-1]
    assert np.all(np.abs(k(0, x, y)) <= k.growth_constant * (1 + np.abs(x) + np.abs(y)) + 1e-12)
    assert math.isfinite(k.growth_constant)
