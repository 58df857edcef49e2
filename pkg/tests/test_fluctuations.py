import math

import numpy as np
import pytest
from scipy.optimize import curve_fit

from polymer_lab.environment import Environment, LogGamma, StripSpec, modify_strip, sample_environment
from polymer_lab.fluctuations import (FluctuationConfig, RejectionError, all_ones_tail,
                                      brute_force_steep_mass, centered_strip, global_fluct_probability,
                                      lemma_pnc_check, local_fluct_probability, quenched_steep_mass,
                                      quenched_tail, steep_mass)
from polymer_lab.partition import iter_paths, log_partition_field
from polymer_lab.rng import make_rng
from polymer_lab.sampler import sample_i_coords, steep_mask


def ones(n):
    return Environment.from_weights(np.ones((n + 1, n + 1)), beta=0.1)


def test_all_ones_global_tail_binomial():
    n = 50
    env = ones(n)
    for k in (0, 3, 7, 12):
        j = np.arange(-25, 26)
        sel = np.abs(j) >= k
        ref = sum(math.comb(50, 25 + int(v)) ** 2 for v in j[sel]) / math.comb(100, 50)
        assert abs(quenched_tail(env, n, [k])[0] - ref) < 1e-12
        assert abs(all_ones_tail(n, n, n, k) - ref) < 1e-12


def test_all_ones_local_tail():
    n, r = 40, 9
    env = ones(n)
    for x in (0.5, 1.5, 3.5):
        assert abs(quenched_tail(env, r, [x])[0] - all_ones_tail(n, n, r, x)) < 1e-12


def test_zero_threshold_is_certain():
    env = sample_environment(LogGamma(theta=10.0), 0.3, 20, 20, seed=1)
    assert abs(quenched_tail(env, 20, [0.0])[0] - 1.0) < 1e-12


def test_sample_method_agrees_with_exact():
    base = dict(n=60, alpha=0.2, replicas=20, seed=4, t_grid=[0.05, 0.1, 0.15])
    ex = global_fluct_probability(FluctuationConfig(method="exact", **base))
    mc = global_fluct_probability(FluctuationConfig(method="sample", samples=2000, **base))
    assert np.all(np.abs(ex.estimate - mc.estimate) <= 3 * mc.stderr + 1e-12)
    assert mc.events is not None and np.all(mc.trials == 40_000)


def test_all_ones_sample_within_three_sigma():
    n = 50
    cfg = FluctuationConfig(n=n, alpha=0.2, replicas=10, seed=1, method="sample", samples=5000,
                            family={"kind": "constant", "value": 1.0}, t_grid=[0.05, 0.1, 0.2])
    rep = global_fluct_probability(cfg)
    scale = n ** (1 - cfg.s * cfg.alpha / 2)
    for t, est, se in zip(rep.x, rep.estimate, rep.stderr):
        assert abs(est - all_ones_tail(n, n, n, t * scale)) <= 3 * se


def test_global_decay_fit_and_report(tmp_path):
    rep = global_fluct_probability(FluctuationConfig(n=200, replicas=20, seed=2))
    assert rep.c > 0 and rep.r2 > 0.9
    assert np.all((rep.estimate >= 0) & (rep.estimate <= 1))
    assert rep.monotone_violations() == 0
    rep.to_csv(tmp_path / "r.csv")
    rep.to_json(tmp_path / "r.json")
    assert (tmp_path / "r.csv").read_text().startswith("t,regressor,estimate")


def test_decay_is_at_least_quadratic_in_t():
    n = 500
    scale = n ** (1 - 0.5 * 0.2 / 2)
    k = np.array([8, 10, 12, 16, 20, 24, 32, 40])
    rep = global_fluct_probability(FluctuationConfig(n=n, t_grid=list(k / scale), replicas=20, seed=5))
    x = k / 10.0
    (b, c, q), _ = curve_fit(lambda t, b, c, q: b - c * t**q, x, np.log(rep.estimate), p0=(0, 1, 2))
    assert c > 0
    assert 2.0 <= q <= 3.0


def test_local_reduces_to_global_at_r_equal_n():
    base = dict(n=60, replicas=5, seed=3, t_grid=[0.1, 0.2])
    g = global_fluct_probability(FluctuationConfig(**base))
    loc = local_fluct_probability(FluctuationConfig(r=60, enforce_local=False, **base))
    np.testing.assert_array_equal(g.estimate, loc.estimate)


def test_local_enforces_small_r():
    with pytest.raises(ValueError):
        local_fluct_probability(FluctuationConfig(n=100, r=50, replicas=2))


@pytest.mark.slow
def test_local_exponent_self_consistency():
    base = dict(n=1000, replicas=10, seed=6, enforce_local=False)
    c100 = local_fluct_probability(FluctuationConfig(r=100, **base)).c
    c400 = local_fluct_probability(FluctuationConfig(r=400, **base)).c
    assert 0.5 <= c100 / c400 <= 2.0


def test_rejection_rate_aborts():
    with pytest.raises(RejectionError):
        global_fluct_probability(FluctuationConfig(n=30, M=0.05, replicas=3, seed=1))


def test_steep_enumeration_examples():
    env = ones(4)
    paths = list(iter_paths((0, 0), (4, 4)))
    assert len(paths) == 70
    s = StripSpec(2, 4)
    ic = np.array([p[:, 0] for p in paths])
    assert abs(brute_force_steep_mass(env, s) - steep_mask(ic, s).mean()) < 1e-14
    assert abs(quenched_steep_mass(env, s) - brute_force_steep_mass(env, s)) < 1e-14
    # a full-length strip: every path ends on the diagonal, none is steep
    assert quenched_steep_mass(env, StripSpec(0, 8)) == 0.0 == brute_force_steep_mass(env, StripSpec(0, 8))


@pytest.mark.parametrize("n", [4, 5, 6])
def test_steep_exact_matches_sampling(n):
    env = sample_environment(LogGamma(theta=4.0), 0.5, n, n, seed=n)
    for s in (StripSpec(n - 1, n + 1), StripSpec(1, 2 * n - 2)):
        exact = brute_force_steep_mass(env, s)
        assert abs(exact - quenched_steep_mass(env, s)) < 1e-12
        mod = modify_strip(env, s)
        N = 20_000
        ic = sample_i_coords(log_partition_field(mod), (n, n), make_rng(n), N)
        p = steep_mask(ic, s).mean()
        assert abs(p - exact) <= 3 * math.sqrt(max(exact * (1 - exact), 1e-12) / N) + 1e-12


def test_steep_mass_sample_zero_hits_reports_upper_bound():
    cfg = FluctuationConfig(n=100, replicas=3, seed=1, method="sample", samples=200, n0_grid=[80])
    rep = steep_mass(cfg)
    assert rep.upper_bound[0] and rep.events[0] == 0
    assert rep.estimate[0] == pytest.approx(1 - 0.05 ** (1 / 600))


def test_steep_mass_n_grid_and_strip_range():
    rep = steep_mass(FluctuationConfig(n=1, n_grid=[64, 128], gamma=0.5, replicas=4, seed=2))
    assert rep.x_name == "n" and len(rep.estimate) == 2
    with pytest.raises(ValueError):
        steep_mass(FluctuationConfig(n=50, strip=StripSpec(1, 120), replicas=2))


def test_centered_strip():
    s = centered_strip(100, 16)
    assert (s.a, s.b) == (92, 108)


def test_lemma_examples():
    rep = lemma_pnc_check(4, [0, 2, -2])
    np.testing.assert_allclose(np.exp(rep.log_a), [6, 1, 1])
    big = lemma_pnc_check(1000, [15, -15])
    assert abs(big.deviation[0]) < 0.01 and big.deviation[0] == big.deviation[1]
    with pytest.raises(ValueError):
        lemma_pnc_check(5, [0])
