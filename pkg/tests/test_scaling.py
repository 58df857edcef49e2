import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special, stats

from polymer_lab.environment import ExpTilt, GaussianXi, LogGamma, TwoPointXi, UniformXi, sample_environment
from polymer_lab.partition import free_energy
from polymer_lab.scaling import (ModelConstants, centering_and_scale, digamma, expweight_moment,
                                 loggamma_log_moment, loggamma_moment, moment_gap,
                                 rescale_free_energy, theta_of_beta, trigamma2)
from polymer_lab.stats import linear_fit
from polymer_lab.tracy_widom import TW_GUE_MEAN

BETAS = np.array([0.2, 0.1, 0.05, 0.025])


def euler_gamma_series(terms=200_000):
    # gamma = lim (H_N - log N), with the 1/(2N) - 1/(12 N^2) correction
    N = terms
    H = math.fsum(1.0 / k for k in range(1, N + 1))
    return H - math.log(N) - 1 / (2 * N) + 1 / (12 * N * N)


def test_digamma_one():
    assert abs(digamma(1.0) + euler_gamma_series()) < 1e-12


def test_trigamma2_one_is_minus_two_zeta3():
    zeta3 = math.fsum(1.0 / k**3 for k in range(1, 200_000)) + 1 / (2 * 200_000**2)
    assert abs(trigamma2(1.0) + 2 * zeta3) < 1e-11


@pytest.mark.parametrize("x", [0.5, 1.0, 3.7])
def test_digamma_recurrence(x):
    assert abs(digamma(x + 1) - digamma(x) - 1 / x) < 1e-12


def test_digamma_reflection_grid():
    for x in np.linspace(0.05, 0.95, 19):
        lhs = digamma(1 - x) - digamma(x)
        assert abs(lhs - math.pi / math.tan(math.pi * x)) < 1e-12 * max(1, abs(lhs))


def test_against_mpmath_grid():
    for x in np.geomspace(0.01, 1e4, 60):
        ref = float(mpmath.digamma(x))
        assert abs(digamma(x) - ref) <= 1e-12 * max(1, abs(ref))
        ref2 = float(mpmath.polygamma(2, x))
        assert abs(trigamma2(x) - ref2) <= 1e-12 * abs(ref2)


def test_vectorized_and_errors():
    x = np.array([0.5, 2.0, 40.0])
    np.testing.assert_allclose(digamma(x), special.digamma(x), rtol=1e-13)
    with pytest.raises(ValueError):
        digamma(0.0)
    with pytest.raises(ValueError):
        trigamma2(-1.0)


def test_theta_gaussian():
    r = theta_of_beta(GaussianXi(), 0.1)
    assert abs(r.theta - (2 + 1 / math.expm1(0.01))) < 1e-9
    assert abs(r.theta - 101.50083333) < 1e-6


def test_theta_ratio_approaches_one():
    ratios = [theta_of_beta(GaussianXi(), b).ratio for b in (0.2, 0.1, 0.05)]
    gaps = np.abs(np.array(ratios) - 1)
    assert gaps[0] > gaps[1] > gaps[2]


def test_theta_two_point_matches_gaussian():
    for b in (0.1, 0.05):
        g = theta_of_beta(GaussianXi(), b).theta
        t = theta_of_beta(TwoPointXi.standardized(0.5), b).theta
        assert abs(t - g) / g < 2 * b * b


def test_loggamma_moment_examples():
    for theta in (1.5, 4.0, 300.0):
        assert loggamma_moment(theta, 1) == 1.0
    assert abs(loggamma_moment(10.0, 3) - 81 / 56) < 1e-15
    val, _ = integrate.quad(lambda x: (9 / x) ** 3 * stats.gamma.pdf(x, 10), 0, np.inf, epsabs=0, epsrel=1e-13)
    assert abs(val - 81 / 56) < 1e-10
    with pytest.raises(ValueError):
        loggamma_moment(2.5, 3)


@given(st.floats(3.5, 500), st.sampled_from([-2, -1, 2, 3, 2.5]))
def test_loggamma_moment_matches_gamma_ratio(theta, k):
    ref = k * math.log(theta - 1) + float(mpmath.loggamma(theta - k) - mpmath.loggamma(theta))
    assert abs(loggamma_log_moment(theta, k) - ref) < 1e-12 * max(1, abs(ref))


def test_loggamma_second_moment_slope():
    v = [loggamma_moment(1 / b**2, 2) - 1 for b in BETAS]
    assert 1.9 <= linear_fit(np.log(BETAS), np.log(v)).slope <= 2.1


def test_expweight_moment_examples():
    xi = GaussianXi()
    assert abs(expweight_moment(xi, 0.3, 1) - 1) < 1e-15
    assert abs(expweight_moment(xi, 0.1, 3) - math.exp(0.03)) < 1e-14
    w = np.exp(sample_environment(ExpTilt(xi), 0.1, 3161, 3161, seed=2).log_weights.ravel())
    w3 = w**3
    assert abs(w3.mean() - math.exp(0.03)) < 4 * w3.std() / math.sqrt(w3.size)


@pytest.mark.parametrize("xi", [GaussianXi(), UniformXi(math.sqrt(3)), TwoPointXi.standardized(0.3)])
def test_first_two_gaps_vanish(xi):
    for b in (0.2, 0.1, 0.05, 0.025):
        assert moment_gap(xi, b, 1) < 1e-12
        assert moment_gap(xi, b, 2) < 1e-12


def test_third_gap_slopes():
    g = [moment_gap(GaussianXi(), b, 3) for b in BETAS]
    assert linear_fit(np.log(BETAS), np.log(g)).slope >= 3.9
    sk = [moment_gap(TwoPointXi.standardized(0.8), b, 3) for b in BETAS]
    assert 2.8 <= linear_fit(np.log(BETAS), np.log(sk)).slope <= 3.2


def test_gap_against_mpmath():
    b = 0.025
    with mpmath.workdps(50):
        bb = mpmath.mpf(b)
        theta = 2 + 1 / mpmath.expm1(bb**2)
        ew = mpmath.exp(3 * bb**2)  # phi(3b)/phi(b)^3 = e^{9b^2/2 - 3b^2/2}
        eg = (theta - 1) ** 3 / ((theta - 1) * (theta - 2) * (theta - 3))
        ref = float(abs(ew - eg))
    assert abs(moment_gap(GaussianXi(), b, 3) - ref) < 1e-9 * ref


def test_constants_examples():
    c = ModelConstants.from_xi(10_000, GaussianXi(), alpha=0.2)
    assert abs(centering_and_scale(c).ratio - 1) < 0.05
    c2 = ModelConstants.from_xi(20_000, GaussianXi(), alpha=0.2, beta=c.beta)
    assert abs(c2.a_n - 2 * c.a_n) < 1e-9 * abs(c.a_n)
    lg = ModelConstants.log_gamma(100, beta=0.1, theta=20.0)
    assert lg.a_n == lg.mean_one_centering == 200 * (math.log(19) - digamma(10.0))
    with pytest.raises(ValueError):
        ModelConstants(10, 1.2, 5.0)


def test_rescale_examples():
    c = ModelConstants.from_xi(1000, GaussianXi(), alpha=0.2)
    assert rescale_free_energy(c.a_n, c, mean_one=False) == 0.0
    assert rescale_free_energy(c.mean_one_centering, c, mode="paper") == 0.0
    x = c.mean_one_centering + 3.0
    doubled = ModelConstants(c.n, c.beta, c.theta, c.sigma2 * 2 ** 1.5, c.log_phi, c.alpha)
    assert abs(rescale_free_energy(x, doubled, "paper") - rescale_free_energy(x, c, "paper") / 2) < 1e-12
    with pytest.raises(ValueError):
        rescale_free_energy(0.0, c, mode="other")


def test_lattice_mode_differs_by_vanishing_shift():
    for n in (10**3, 10**6):
        c = ModelConstants.log_gamma(n, beta=0.5, theta=6.0)
        d = rescale_free_energy(c.mean_one_centering, c, "exact") - rescale_free_energy(c.mean_one_centering, c, "lattice")
        assert abs(d) < 3 * n ** (-1 / 3)


def test_rescaled_log_gamma_mean_near_tw():
    theta, n = 6.0, 1000
    c = ModelConstants.log_gamma(n, beta=0.2, theta=theta)
    lz = [free_energy(sample_environment(LogGamma(theta=theta), 0.2, n, n, seed=k)) for k in range(100)]
    assert abs(np.mean(rescale_free_energy(lz, c)) - TW_GUE_MEAN) < 0.3
