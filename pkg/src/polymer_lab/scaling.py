"""Closed-form constants of the intermediate-disorder regime.

Everything here is a pure function of its arguments.  ``xi`` arguments are
any object with a ``log_mgf(t)`` method and a ``variance`` attribute (see
``polymer_lab.environment``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

# Bernoulli numbers B_2, B_4, ..., B_14
_BERNOULLI = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6)
_SHIFT_TO = 10.0


def _shifted(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("argument must be positive")
    y = x.copy()
    steps = []
    while True:
        mask = y < _SHIFT_TO
        if not mask.any():
            break
        steps.append((mask, y.copy()))
        y = np.where(mask, y + 1.0, y)
    return y, steps


def digamma(x):
    """Psi(x) for x > 0: upward recurrence to x >= 10, then the Stirling series."""
    scalar = np.ndim(x) == 0
    y, steps = _shifted(x)
    acc = np.zeros_like(y)
    for mask, yk in steps:
        acc -= np.where(mask, 1.0 / yk, 0.0)
    inv2 = 1.0 / (y * y)
    series = np.zeros_like(y)
    for k in range(len(_BERNOULLI), 0, -1):
        series = (series + _BERNOULLI[k - 1] / (2 * k)) * inv2
    out = np.log(y) - 0.5 / y - series + acc
    return float(out) if scalar else out


def trigamma2(x):
    """Psi''(x) for x > 0 (the second derivative of the digamma function)."""
    scalar = np.ndim(x) == 0
    y, steps = _shifted(x)
    acc = np.zeros_like(y)
    for mask, yk in steps:
        acc -= np.where(mask, 2.0 / yk**3, 0.0)
    inv = 1.0 / y
    inv2 = inv * inv
    # -1/y^2 - 1/y^3 - sum_k (2k+1) B_2k / y^(2k+2)
    series = np.zeros_like(y)
    for k in range(len(_BERNOULLI), 0, -1):
        series = (series + (2 * k + 1) * _BERNOULLI[k - 1]) * inv2
    out = -inv2 * (1.0 + inv + series) + acc
    return float(out) if scalar else out


class ThetaResult(NamedTuple):
    theta: float
    ratio: float  # theta * sigma^2 * beta^2, tends to 1 as beta -> 0


def theta_of_beta(xi, beta: float) -> ThetaResult:
    """Log-gamma shape matching the first two moments of ``exp(beta xi)/phi(beta)``."""
    l2 = float(xi.log_mgf(2 * beta) - 2 * xi.log_mgf(beta))
    q = math.expm1(l2)  # phi(2b)/phi(b)^2 - 1
    if not q > 0:
        raise ValueError("degenerate variance: phi(2 beta) <= phi(beta)^2")
    theta = 2.0 + 1.0 / q
    return ThetaResult(theta, theta * xi.variance * beta * beta)


def loggamma_log_moment(theta: float, k: float) -> float:
    """log E[omega^k] for omega = (theta - 1)/Gamma(theta, 1); needs theta > k."""
    if not theta > k:
        raise ValueError(f"moment of order {k} needs theta > {k}, got {theta}")
    if float(k).is_integer():
        k = int(k)
        if k >= 0:
            # (theta-1)^k / prod_{j=1..k} (theta-j)
            return math.fsum(math.log1p((j - 1) / (theta - j)) for j in range(2, k + 1))
        # (theta-1)^k * prod_{j=0..|k|-1} (theta+j)
        return math.fsum(math.log1p((j + 1) / (theta - 1)) for j in range(-k))
    return k * math.log(theta - 1) + float(gammaln(theta - k) - gammaln(theta))


def loggamma_moment(theta: float, k: float) -> float:
    return math.exp(loggamma_log_moment(theta, k))


def expweight_log_moment(xi, beta: float, k: float) -> float:
    return float(xi.log_mgf(k * beta) - k * xi.log_mgf(beta))


def expweight_moment(xi, beta: float, k: float) -> float:
    """E[omega^k] = phi(k beta) / phi(beta)^k for the tilted weight."""
    return math.exp(expweight_log_moment(xi, beta, k))


def moment_gap(xi, beta: float, k: int, theta: float | None = None) -> float:
    """|E omega^k - E omega'^k| between tilted and moment-matched log-gamma weights.

    Computed as ``E omega'^k * |expm1(log E omega^k - log E omega'^k)|`` so gaps
    of order beta^4 are not lost against moments of order one.
    """
    if theta is None:
        theta = theta_of_beta(xi, beta).theta
    lw = expweight_log_moment(xi, beta, k)
    lg = loggamma_log_moment(theta, k)
    return abs(math.exp(lg) * math.expm1(lw - lg))


@dataclass(frozen=True)
class ModelConstants:
    """Scaling constants for one (n, beta) configuration.

    ``log_phi`` is ``log phi(beta)`` for tilted weights and 0 for a pure
    log-gamma environment.
    """

    n: int
    beta: float
    theta: float
    sigma2: float = 1.0
    log_phi: float = 0.0
    alpha: float | None = None

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.theta > 1:
            raise ValueError("theta must exceed 1")
        if self.n < 1:
            raise ValueError("n must be positive")

    @classmethod
    def from_xi(cls, n: int, xi, *, alpha: float | None = None, beta: float | None = None):
        beta = _resolve_beta(n, alpha, beta)
        theta = theta_of_beta(xi, beta).theta
        return cls(n, beta, theta, float(xi.variance), float(xi.log_mgf(beta)), alpha)

    @classmethod
    def log_gamma(cls, n: int, *, alpha: float | None = None, beta: float | None = None,
                  theta: float | None = None, sigma2: float | None = None):
        beta = _resolve_beta(n, alpha, beta)
        if theta is None:
            theta = 1.0 / ((sigma2 or 1.0) * beta * beta)
        if sigma2 is None:
            # variance of the weights is 1/(theta - 2) ~ sigma^2 beta^2
            sigma2 = 1.0 / ((theta - 2.0) * beta * beta) if theta > 2 else 1.0
        return cls(n, beta, theta, sigma2, 0.0, alpha)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def a_n(self) -> float:
        return 2 * self.n * (self.log_phi + math.log(self.theta - 1) - digamma(self.theta / 2))

    @property
    def mean_one_centering(self) -> float:
        """Centering for mean-one weights, i.e. ``a_n`` without the ``2n log phi`` shift."""
        return 2 * self.n * (math.log(self.theta - 1) - digamma(self.theta / 2))

    @property
    def paper_scale(self) -> float:
        return (4 * self.sigma2**2 * self.beta**4 * self.n) ** (1 / 3)

    @property
    def exact_scale(self) -> float:
        return (-trigamma2(self.theta / 2) * self.n) ** (1 / 3)

    @property
    def lattice_centering(self) -> float:
        """Log-gamma centering on the vertex grid: side ``N = n + 1``, ``2n + 1`` weights per path."""
        N = self.n + 1
        return (2 * self.n + 1) * math.log(self.theta - 1) - 2 * N * digamma(self.theta / 2)

    @property
    def lattice_scale(self) -> float:
        return (-trigamma2(self.theta / 2) * (self.n + 1)) ** (1 / 3)

    @property
    def transfer_scale(self) -> float:
        return self.sigma * self.beta ** (4 / 3) * self.n ** (1 / 3)


def _resolve_beta(n, alpha, beta):
    if beta is None:
        if alpha is None:
            raise ValueError("give alpha or beta")
        beta = float(n) ** (-alpha)
    return float(beta)


class CenteringAndScale(NamedTuple):
    a_n: float
    paper_scale: float
    exact_scale: float
    ratio: float  # exact / paper


def centering_and_scale(c: ModelConstants) -> CenteringAndScale:
    return CenteringAndScale(c.a_n, c.paper_scale, c.exact_scale, c.exact_scale / c.paper_scale)


_SCALES = {"paper": "paper_scale", "exact": "exact_scale", "transfer": "transfer_scale",
           "lattice": "lattice_scale"}


def rescale_free_energy(log_z, c: ModelConstants, mode: str = "exact", mean_one: bool = True):
    """Centered and scaled free energy ``(log Z - centering) / scale``.

    ``mean_one=True`` means ``log_z`` was computed from mean-one weights (as all
    sampled environments here are); ``False`` means raw ``exp(beta xi)`` weights,
    for which the centering is ``a_n`` itself.  ``mode="lattice"`` swaps in the
    log-gamma centering and scale with the grid side counted as ``n + 1``; it
    differs from ``exact`` by ``O(n^{-1/3})``.
    """
    try:
        scale = getattr(c, _SCALES[mode])
    except KeyError:
        raise ValueError(f"unknown scale mode {mode!r}") from None
    center = c.mean_one_centering if mean_one else c.a_n
    if mode == "lattice":
        center = c.lattice_centering + (0.0 if mean_one else (2 * c.n + 1) * c.log_phi)
    return (np.asarray(log_z, dtype=float) - center) / scale
