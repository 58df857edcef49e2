from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import stats


def clopper_pearson(k: int, N: int, conf: float = 0.95) -> tuple[float, float]:
    alpha = 1.0 - conf
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, N - k + 1))
    hi = 1.0 if k == N else float(stats.beta.ppf(1 - alpha / 2, k + 1, N - k))
    return lo, hi


def zero_hit_upper(N: int, conf: float = 0.95) -> float:
    """One-sided Clopper-Pearson upper bound when no events were seen in N trials."""
    return 1.0 - (1.0 - conf) ** (1.0 / N)


def binomial_stderr(k, N):
    p = np.asarray(k, dtype=float) / N
    return np.sqrt(p * (1 - p) / N)


class LinearFit(NamedTuple):
    slope: float
    intercept: float
    r2: float
    residuals: np.ndarray


def linear_fit(x, y) -> LinearFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        return LinearFit(math.nan, math.nan, math.nan, np.array([]))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(slope), float(intercept), r2, resid)


def chi_square_pvalue(counts, probs) -> float:
    """Pearson goodness of fit, pooling cells with expected count below 5."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    N = counts.sum()
    expected = probs * N
    small = expected < 5
    if small.any():
        counts = np.append(counts[~small], counts[small].sum())
        expected = np.append(expected[~small], expected[small].sum())
        if expected[-1] == 0:
            counts, expected = counts[:-1], expected[:-1]
    if len(counts) < 2:
        return 1.0
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    return float(stats.chi2.sf(chi2, len(counts) - 1))


def total_variation(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))
