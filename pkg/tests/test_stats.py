import numpy as np
from scipy import stats as sst

from polymer_lab.stats import (binomial_stderr, chi_square_pvalue, clopper_pearson, linear_fit,
                               total_variation, zero_hit_upper)


def test_clopper_pearson():
    lo, hi = clopper_pearson(5, 100)
    assert lo < 0.05 < hi
    assert clopper_pearson(0, 50)[0] == 0.0 and clopper_pearson(50, 50)[1] == 1.0


def test_zero_hit_upper_is_rule_of_three():
    assert abs(zero_hit_upper(1000) - 3 / 1000) < 1e-4
    assert abs(zero_hit_upper(1000) - sst.beta.ppf(0.95, 1, 1000)) < 1e-12


def test_binomial_stderr():
    assert binomial_stderr(50, 100) == 0.05


def test_linear_fit():
    x = np.arange(5.0)
    f = linear_fit(x, 2 * x + 1)
    assert abs(f.slope - 2) < 1e-12 and abs(f.intercept - 1) < 1e-12 and f.r2 == 1.0


def test_chi_square_pools_small_cells():
    probs = np.array([0.5, 0.4, 0.0999, 0.0001])
    counts = np.array([500, 400, 100, 0])
    assert chi_square_pvalue(counts, probs) > 0.5
    assert chi_square_pvalue([900, 100], [0.5, 0.5]) < 1e-10


def test_total_variation():
    assert total_variation([0.5, 0.5], [1.0, 0.0]) == 0.5
