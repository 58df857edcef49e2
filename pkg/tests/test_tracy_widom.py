import math

import numpy as np
import pytest

from polymer_lab.rng import make_rng
from polymer_lab.tracy_widom import (TW_GUE_MEAN, TW_GUE_VARIANCE, ConvergenceError, DistributionTable,
                                     QuadratureRule, airy_kernel_matrix, build_table, file_checksum,
                                     ks_critical, ks_distance, ks_two_sample, resolve_cutoff, tail_cut,
                                     tw_gue_cdf, tw_gue_cdf_checked, tw_moments)
from polymer_lab.airy import airy_ai


@pytest.fixture(scope="module")
def table():
    return build_table()


def test_gauss_legendre_exactness():
    rule = QuadratureRule.gauss_legendre(10, -1.0, 3.0)
    assert np.all(rule.weights > 0) and np.all(np.diff(rule.nodes) > 0)
    for d in range(20):
        exact = (3.0 ** (d + 1) - (-1.0) ** (d + 1)) / (d + 1)
        assert abs(np.dot(rule.weights, rule.nodes**d) - exact) < 1e-12 * max(1, abs(exact))


def test_kernel_symmetric_with_analytic_diagonal():
    x = np.array([-3.0, -1.0, -1.0 + 1e-8, 0.5, 2.0])
    K = airy_kernel_matrix(x)
    assert np.array_equal(K, K.T)
    a, ap = airy_ai(x)
    np.testing.assert_allclose(np.diag(K), ap**2 - x * a**2, rtol=1e-14)
    assert abs(K[1, 2] - K[1, 1]) < 1e-7


def test_upper_tail():
    assert tw_gue_cdf(6.0) > 1 - 1e-8


def test_self_convergence():
    for s in np.linspace(-8, 4, 25):
        assert abs(tw_gue_cdf(s, 40) - tw_gue_cdf(s, 80)) < 1e-8


def test_cutoff_invariance():
    for s in (-7.0, -2.0, 1.0):
        T = resolve_cutoff(s, None)
        assert abs(tw_gue_cdf(s, cutoff=T) - tw_gue_cdf(s, cutoff=T + 4)) < 1e-8


def test_cutoff_rule():
    assert airy_ai(tail_cut())[0] ** 2 < 1e-30
    with pytest.raises(ValueError):
        resolve_cutoff(-8.0, 4.0)


def test_domain_guards():
    with pytest.raises(ValueError):
        tw_gue_cdf(-11.0)
    with pytest.raises(ValueError):
        tw_gue_cdf(0.0, order=10)


def test_checked_convergence():
    assert abs(tw_gue_cdf_checked(-2.0) - 0.41322414) < 1e-7
    with pytest.raises(ConvergenceError):
        tw_gue_cdf_checked(-6.0, order=20, tol=1e-11)


def test_moments():
    mean, var = tw_moments()
    assert abs(mean - TW_GUE_MEAN) < 1e-3 and abs(mean + 1.7711) < 1e-3
    assert abs(var - TW_GUE_VARIANCE) < 1e-3 and abs(var - 0.8132) < 1e-3


def test_table_properties(table, tmp_path):
    assert np.all(np.diff(table.F) >= 0)
    assert table.F[0] < 1e-8 and table.F[-1] > 1 - 1e-8
    path = tmp_path / "tw.csv"
    checksum = table.to_csv(path)
    assert checksum == file_checksum(path)
    back = DistributionTable.from_csv(path)
    np.testing.assert_array_equal(back.F, table.F)
    assert table.cdf(-20.0) == 0.0 and table.cdf(20.0) == 1.0
    with pytest.raises(ValueError):
        DistributionTable(np.array([0, 1, 2, 3.0]), np.array([0.1, 0.3, 0.2, 0.9]))


def test_ks_self_samples(table):
    x = table.sample(make_rng(5), 10_000)
    assert ks_distance(x, table) < 0.02
    assert ks_critical(10_000) == pytest.approx(1.63 / 100, rel=0.01)


def test_ks_shifted(table):
    x = table.sample(make_rng(6), 10_000)
    assert ks_distance(x + 1, table) > 0.3


def test_ks_degenerate(table):
    assert ks_distance(np.full(200, -10.0), table) > 0.99
    with pytest.raises(ValueError):
        ks_distance(np.zeros(10), table)


def test_ks_two_sample():
    a = make_rng(1).normal(size=500)
    assert ks_two_sample(a, a) == 0.0
    assert ks_two_sample(a, a + 10) == 1.0
    assert math.isclose(ks_two_sample([0, 1], [0.5]), 0.5)
