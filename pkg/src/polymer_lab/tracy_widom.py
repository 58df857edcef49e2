"""Tracy-Widom GUE distribution via the Airy-kernel Fredholm determinant.

``F2(s) = det(I - K_Ai)`` on ``L^2(s, inf)``, discretized by Gauss-Legendre
(Nystrom) on a finite window ``[s, s + T]``.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import lu_factor

from .airy import airy_ai

DEFAULT_ORDER = 64
DEFAULT_CUTOFF = 16.0
TAIL_TOL = 1e-30  # Ai(s + T)^2 must fall below this

TW_GUE_MEAN = -1.7710868074
TW_GUE_VARIANCE = 0.8131947928


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    order: int
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss_legendre(cls, order: int, lo: float, hi: float) -> "QuadratureRule":
        x, w = _legendre(order)
        half = 0.5 * (hi - lo)
        return cls(order, lo + half * (x + 1.0), half * w)


@lru_cache(maxsize=32)
def _legendre(order):
    x, w = np.polynomial.legendre.leggauss(order)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


@lru_cache(maxsize=1)
def tail_cut() -> float:
    """Smallest half-integer x with Ai(x)^2 below ``TAIL_TOL``."""
    x = 6.0
    while airy_ai(x)[0] ** 2 >= TAIL_TOL:
        x += 0.5
    return x


def resolve_cutoff(s: float, cutoff: float | None) -> float:
    if cutoff is None:
        return max(DEFAULT_CUTOFF, tail_cut() - s)
    if airy_ai(s + cutoff)[0] ** 2 >= TAIL_TOL:
        raise ValueError(f"cutoff {cutoff} too short at s={s}: Ai(s+T)^2 >= {TAIL_TOL}")
    return float(cutoff)


def airy_kernel_matrix(x: np.ndarray) -> np.ndarray:
    """``K(x_i, x_j)`` with the analytic diagonal ``Ai'^2 - x Ai^2``."""
    ai, aip = airy_ai(x)
    num = np.outer(ai, aip) - np.outer(aip, ai)
    diff = x[:, None] - x[None, :]
    diag_val = aip**2 - x * ai**2
    close = np.abs(diff) < 1e-6
    with np.errstate(divide="ignore", invalid="ignore"):
        K = num / diff
    if close.any():
        # first-order Taylor of the numerator: K(x, y) ~ Ai'(x)^2 - x Ai(x)^2
        K = np.where(close, 0.5 * (diag_val[:, None] + diag_val[None, :]), K)
    np.fill_diagonal(K, diag_val)
    return 0.5 * (K + K.T)


def _det_i_minus(A: np.ndarray) -> float:
    lu, piv = lu_factor(np.eye(len(A)) - A, check_finite=False)
    sign = -1.0 if np.count_nonzero(piv != np.arange(len(piv))) % 2 else 1.0
    d = np.diag(lu)
    return float(sign * np.prod(d))


def tw_gue_cdf(s: float, order: int = DEFAULT_ORDER, cutoff: float | None = None) -> float:
    """``F2(s)`` from an ``order``-point Nystrom discretization on ``[s, s + T]``."""
    if not -10.0 <= s <= 6.0:
        raise ValueError("s must lie in [-10, 6]")
    if order < 20:
        raise ValueError("order must be at least 20")
    T = resolve_cutoff(s, cutoff)
    rule = QuadratureRule.gauss_legendre(order, s, s + T)
    sw = np.sqrt(rule.weights)
    A = sw[:, None] * airy_kernel_matrix(rule.nodes) * sw[None, :]
    return min(max(_det_i_minus(A), 0.0), 1.0)


def tw_gue_cdf_checked(s: float, order: int = DEFAULT_ORDER, cutoff: float | None = None,
                       tol: float = 1e-6) -> float:
    """``tw_gue_cdf`` with an order-doubling check; raises ``ConvergenceError`` on disagreement."""
    lo = tw_gue_cdf(s, order, cutoff)
    hi = tw_gue_cdf(s, 2 * order, cutoff)
    if abs(lo - hi) > tol:
        raise ConvergenceError(f"F2({s}) not converged: {lo} vs {hi}")
    return hi


@dataclass(frozen=True, eq=False)
class DistributionTable:
    s: np.ndarray
    F: np.ndarray
    method: str = "pchip"
    _interp: PchipInterpolator = field(init=False, repr=False)

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        F = np.asarray(self.F, dtype=float)
        if s.shape != F.shape or s.ndim != 1 or len(s) < 4:
            raise ValueError("table needs matching 1-d grids")
        if np.any(np.diff(s) <= 0):
            raise ValueError("s grid must be increasing")
        if np.any(np.diff(F) < 0):
            raise ValueError("F must be nondecreasing")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "_interp", PchipInterpolator(s, F, extrapolate=False))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = self._interp(np.clip(x, self.s[0], self.s[-1]))
        out = np.where(x < self.s[0], 0.0, np.where(x > self.s[-1], 1.0, out))
        return np.clip(out, 0.0, 1.0)

    def ppf(self, u):
        keep = np.concatenate([[True], np.diff(self.F) > 0])
        return np.interp(u, self.F[keep], self.s[keep])

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.ppf(rng.random(size))

    def to_csv(self, path) -> str:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "F2"])
            for a, b in zip(self.s, self.F):
                w.writerow([repr(float(a)), repr(float(b))])
        return file_checksum(path)

    @classmethod
    def from_csv(cls, path) -> "DistributionTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(np.array([float(r["s"]) for r in rows]), np.array([float(r["F2"]) for r in rows]))


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_table(s_min: float = -10.0, s_max: float = 6.0, step: float = 0.02,
                order: int = DEFAULT_ORDER, workers: int = 1) -> DistributionTable:
    num = int(round((s_max - s_min) / step)) + 1
    s = np.linspace(s_min, s_max, num)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            F = np.array(list(ex.map(tw_gue_cdf, s, [order] * num, chunksize=32)))
    else:
        F = np.array([tw_gue_cdf(x, order) for x in s])
    # tiny negative increments from rounding near 0 and 1
    F = np.maximum.accumulate(F)
    return DistributionTable(s, F)


def tw_moments(order: int = DEFAULT_ORDER, s_min: float = -10.0, s_max: float = 6.0,
               panels: int = 32, panel_order: int = 16) -> tuple[float, float]:
    """Mean and variance of F2 by integrating the CDF by parts.

    ``E X = s_max - int F``, ``E X^2 = s_max^2 - 2 int s F``; the tail mass
    outside ``[s_min, s_max]`` is below 1e-10.
    """
    edges = np.linspace(s_min, s_max, panels + 1)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        rule = QuadratureRule.gauss_legendre(panel_order, lo, hi)
        xs.append(rule.nodes)
        ws.append(rule.weights)
    x = np.concatenate(xs)
    w = np.concatenate(ws)
    F = np.array([tw_gue_cdf(v, order) for v in x])
    mean = s_max - np.dot(w, F)
    second = s_max**2 - 2 * np.dot(w, x * F)
    return float(mean), float(second - mean**2)


def ks_distance(samples, table: DistributionTable) -> float:
    """Sup distance between the empirical CDF of ``samples`` and the tabulated F2."""
    x = np.sort(np.asarray(samples, dtype=float))
    N = len(x)
    if N < 100:
        raise ValueError("need at least 100 samples")
    F = table.cdf(x)
    k = np.arange(1, N + 1)
    return float(max(np.max(k / N - F), np.max(F - (k - 1) / N)))


def ks_two_sample(a, b) -> float:
    """Sup distance between two empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def ks_critical(N: int, level: float = 0.01) -> float:
    """Asymptotic KS critical value ``c(level)/sqrt(N)`` (1.63 at 1%)."""
    c = math.sqrt(-0.5 * math.log(level / 2))
    return c / math.sqrt(N)
