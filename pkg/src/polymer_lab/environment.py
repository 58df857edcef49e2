"""Quenched random weight fields on the lattice ``{0..m} x {0..n}``.

Weights are always stored as logs; ``Environment.weights`` exponentiates on
demand.  Families:

* ``ExpTilt(xi)``      -- ``omega = exp(beta*xi) / phi(beta)`` with ``phi`` the mgf of ``xi``
* ``LogGamma(theta)``  -- ``omega = (theta - 1) / X`` with ``X ~ Gamma(theta, 1)``
* ``Constant(value)``  -- deterministic weights
* ``TwoPoint(v1, v2, p)`` -- ``omega = v1`` with probability ``p``, else ``v2``
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, ClassVar, Protocol, Union

import numpy as np
from scipy import integrate, stats

from .rng import make_rng
from .scaling import loggamma_log_moment, theta_of_beta

# --------------------------------------------------------------------------
# distributions of the tilt variable xi
# --------------------------------------------------------------------------


class XiDistribution(Protocol):
    variance: float

    def log_mgf(self, t): ...

    def sample(self, rng: np.random.Generator, size) -> np.ndarray: ...

    def expect(self, func: Callable[[float], float], kink: float | None = None) -> float: ...

    def to_dict(self) -> dict: ...


def _quad(func, lo, hi, kink=None):
    pieces = [lo, hi]
    if kink is not None and lo < kink < hi:
        pieces = [lo, kink, hi]
    total = 0.0
    for a, b in zip(pieces[:-1], pieces[1:]):
        val, _ = integrate.quad(func, a, b, epsabs=0.0, epsrel=1e-12, limit=400)
        total += val
    return total


@dataclass(frozen=True)
class GaussianXi:
    sigma: float = 1.0

    @property
    def variance(self) -> float:
        return self.sigma**2

    @property
    def third_moment(self) -> float:
        return 0.0

    def log_mgf(self, t):
        return 0.5 * self.sigma**2 * np.square(t)

    def sample(self, rng, size):
        return self.sigma * rng.standard_normal(size)

    def expect(self, func, kink=None):
        s = self.sigma
        dens = lambda x: func(x) * math.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))
        return _quad(dens, -40 * s, 40 * s, kink)

    def to_dict(self):
        return {"kind": "gaussian", "sigma": self.sigma}


def _log_sinhc(x):
    # log(sinh(x)/x) without cancellation near 0
    x = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    small = x < 1.0
    xs = x[small]
    # (sinh x - x)/x = sum_{k>=1} x^{2k} / (2k+1)!
    term = xs * xs / 6.0
    acc = term.copy()
    for k in range(2, 14):
        term = term * xs * xs / ((2 * k) * (2 * k + 1))
        acc += term
    out[small] = np.log1p(acc)
    xl = x[~small]
    out[~small] = xl + np.log1p(-np.exp(-2 * xl)) - np.log(2 * xl)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class UniformXi:
    half_width: float = math.sqrt(3.0)

    @property
    def variance(self) -> float:
        return self.half_width**2 / 3.0

    @property
    def third_moment(self) -> float:
        return 0.0

    def log_mgf(self, t):
        return _log_sinhc(self.half_width * np.asarray(t, dtype=float))

    def sample(self, rng, size):
        return rng.uniform(-self.half_width, self.half_width, size)

    def expect(self, func, kink=None):
        h = self.half_width
        return _quad(lambda x: func(x) / (2 * h), -h, h, kink)

    def to_dict(self):
        return {"kind": "uniform", "half_width": self.half_width}


@dataclass(frozen=True)
class TwoPointXi:
    """``xi = a`` with probability ``p``, else ``b``."""

    a: float
    b: float
    p: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0 or self.a == self.b:
            raise ValueError("two-point xi needs 0 < p < 1 and a != b")

    @classmethod
    def standardized(cls, p: float) -> "TwoPointXi":
        """Mean zero, variance one; skewed unless ``p == 1/2``."""
        return cls(math.sqrt((1 - p) / p), -math.sqrt(p / (1 - p)), p)

    @property
    def mean(self) -> float:
        return self.p * self.a + (1 - self.p) * self.b

    @property
    def variance(self) -> float:
        return self.p * (1 - self.p) * (self.a - self.b) ** 2

    @property
    def third_moment(self) -> float:
        mu = self.mean
        return self.p * (self.a - mu) ** 3 + (1 - self.p) * (self.b - mu) ** 3

    def log_mgf(self, t):
        t = np.asarray(t, dtype=float)
        out = np.logaddexp(math.log(self.p) + t * self.a, math.log1p(-self.p) + t * self.b)
        return out if out.ndim else float(out)

    def sample(self, rng, size):
        return np.where(rng.random(size) < self.p, self.a, self.b)

    def expect(self, func, kink=None):
        return self.p * func(self.a) + (1 - self.p) * func(self.b)

    def to_dict(self):
        return {"kind": "two_point", "a": self.a, "b": self.b, "p": self.p}


@dataclass(frozen=True)
class ScipyXi:
    """Any continuous ``scipy.stats`` distribution; the mgf is found by quadrature."""

    dist: Any
    name: str = "custom"

    @property
    def variance(self) -> float:
        return float(self.dist.var())

    @property
    def third_moment(self) -> float:
        return float(self.dist.expect(lambda x: (x - self.dist.mean()) ** 3))

    def _support(self):
        lo, hi = self.dist.support()
        lo = self.dist.ppf(1e-300) if not np.isfinite(lo) else lo
        hi = self.dist.isf(1e-300) if not np.isfinite(hi) else hi
        return float(lo), float(hi)

    def _mgf_scalar(self, t: float) -> float:
        lo, hi = self._support()
        return _quad(lambda x: math.exp(t * x) * self.dist.pdf(x), lo, hi, 0.0)

    def log_mgf(self, t):
        t = np.asarray(t, dtype=float)
        vals = np.vectorize(lambda u: math.log(self._mgf_scalar(u)) if u != 0 else 0.0)(t)
        return vals if vals.ndim else float(vals)

    def sample(self, rng, size):
        return self.dist.rvs(size=size, random_state=rng)

    def expect(self, func, kink=None):
        lo, hi = self._support()
        return _quad(lambda x: func(x) * self.dist.pdf(x), lo, hi, kink)

    def to_dict(self):
        raise TypeError("ScipyXi environments cannot be described in JSON; store them in binary form")


def xi_from_dict(d: dict) -> XiDistribution:
    kind = d.get("kind")
    if kind == "gaussian":
        return GaussianXi(float(d.get("sigma", 1.0)))
    if kind == "uniform":
        return UniformXi(float(d.get("half_width", math.sqrt(3.0))))
    if kind == "two_point":
        if "a" not in d and "p" in d:
            return TwoPointXi.standardized(float(d["p"]))
        return TwoPointXi(float(d["a"]), float(d["b"]), float(d["p"]))
    raise ValueError(f"unknown xi distribution {kind!r}")


# --------------------------------------------------------------------------
# weight families
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpTilt:
    xi: XiDistribution = field(default_factory=GaussianXi)

    tag: ClassVar[str] = "exp_tilt"
    code: ClassVar[int] = 1
    mean_one: ClassVar[bool] = True

    def check(self, beta: float) -> None:
        for t in (beta, 2 * beta):
            lm = self.xi.log_mgf(t)
            if not np.isfinite(lm) or lm > 700:
                raise ValueError(f"mgf of xi is not finite at t={t}")

    def log_moment(self, k: float, beta: float) -> float:
        return float(self.xi.log_mgf(k * beta) - k * self.xi.log_mgf(beta))

    def abs_central_moment(self, k: int, beta: float) -> float:
        if k == 2:
            return math.expm1(self.log_moment(2, beta))
        lphi = float(self.xi.log_mgf(beta))
        return self.xi.expect(lambda x: abs(math.expm1(beta * x - lphi)) ** k, kink=lphi / beta)

    def sample_log_weights(self, rng, beta, shape):
        return beta * self.xi.sample(rng, shape) - float(self.xi.log_mgf(beta))

    def to_dict(self):
        return {"kind": self.tag, "xi": self.xi.to_dict()}


@dataclass(frozen=True)
class LogGamma:
    """Inverse-gamma weights ``(theta - 1)/X``.

    With ``theta=None`` the shape follows the inverse temperature: either the
    moment-matched value for ``match`` (a xi distribution) or ``1/(sigma2 beta^2)``.
    """

    theta: float | None = None
    sigma2: float = 1.0
    match: XiDistribution | None = None

    tag: ClassVar[str] = "log_gamma"
    code: ClassVar[int] = 2
    mean_one: ClassVar[bool] = True

    def theta_at(self, beta: float) -> float:
        if self.theta is not None:
            return float(self.theta)
        if self.match is not None:
            return theta_of_beta(self.match, beta).theta
        return 1.0 / (self.sigma2 * beta * beta)

    def check(self, beta: float) -> None:
        if not self.theta_at(beta) > 1.0:
            raise ValueError("log-gamma weights need theta > 1")

    def log_moment(self, k: float, beta: float) -> float:
        return loggamma_log_moment(self.theta_at(beta), k)

    def abs_central_moment(self, k: int, beta: float) -> float:
        theta = self.theta_at(beta)
        if theta <= k:
            raise ValueError(f"E|omega-1|^{k} diverges for theta={theta}")
        if k == 2:
            return math.expm1(self.log_moment(2, beta))
        g = stats.gamma(theta)
        lo, hi = g.ppf(1e-300), g.isf(1e-300)
        f = lambda x: abs((theta - 1.0) / x - 1.0) ** k * g.pdf(x)
        return _quad(f, lo, hi, theta - 1.0)

    def sample_log_weights(self, rng, beta, shape):
        theta = self.theta_at(beta)
        return math.log(theta - 1.0) - np.log(rng.standard_gamma(theta, shape))

    def to_dict(self):
        d: dict[str, Any] = {"kind": self.tag}
        if self.theta is not None:
            d["theta"] = self.theta
        if self.sigma2 != 1.0:
            d["sigma2"] = self.sigma2
        if self.match is not None:
            d["match"] = self.match.to_dict()
        return d


@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    tag: ClassVar[str] = "constant"
    code: ClassVar[int] = 3

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("constant weight must be positive")

    @property
    def mean_one(self) -> bool:
        return self.value == 1.0

    def check(self, beta):
        pass

    def log_moment(self, k, beta):
        return k * math.log(self.value)

    def abs_central_moment(self, k, beta):
        return abs(self.value - 1.0) ** k

    def sample_log_weights(self, rng, beta, shape):
        return np.full(shape, math.log(self.value))

    def to_dict(self):
        return {"kind": self.tag, "value": self.value}


@dataclass(frozen=True)
class TwoPoint:
    """Weight ``v1`` with probability ``p`` and ``v2`` otherwise (beta is ignored)."""

    v1: float
    v2: float
    p: float

    tag: ClassVar[str] = "two_point"
    code: ClassVar[int] = 4

    def __post_init__(self):
        if not (self.v1 > 0 and self.v2 > 0 and 0.0 <= self.p <= 1.0):
            raise ValueError("two-point weights need v1, v2 > 0 and p in [0, 1]")

    @property
    def mean_one(self) -> bool:
        return abs(self.p * self.v1 + (1 - self.p) * self.v2 - 1.0) < 1e-12

    def check(self, beta):
        pass

    def log_moment(self, k, beta):
        return math.log(self.p * self.v1**k + (1 - self.p) * self.v2**k)

    def abs_central_moment(self, k, beta):
        return self.p * abs(self.v1 - 1) ** k + (1 - self.p) * abs(self.v2 - 1) ** k

    def sample_log_weights(self, rng, beta, shape):
        return np.where(rng.random(shape) < self.p, math.log(self.v1), math.log(self.v2))

    def to_dict(self):
        return {"kind": self.tag, "v1": self.v1, "v2": self.v2, "p": self.p}


WeightFamily = Union[ExpTilt, LogGamma, Constant, TwoPoint]
_FAMILY_BY_CODE = {cls.code: cls for cls in (ExpTilt, LogGamma, Constant, TwoPoint)}


def family_from_dict(d: dict) -> WeightFamily:
    kind = d.get("kind")
    if kind == "exp_tilt":
        return ExpTilt(xi_from_dict(d.get("xi", {"kind": "gaussian"})))
    if kind == "log_gamma":
        match = xi_from_dict(d["match"]) if d.get("match") else None
        theta = d.get("theta")
        return LogGamma(None if theta is None else float(theta), float(d.get("sigma2", 1.0)), match)
    if kind == "constant":
        return Constant(float(d.get("value", 1.0)))
    if kind == "two_point":
        return TwoPoint(float(d["v1"]), float(d["v2"]), float(d["p"]))
    raise ValueError(f"unknown weight family {kind!r}")


# --------------------------------------------------------------------------
# environments
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StripSpec:
    """Closed time interval ``a <= i + j <= b``."""

    a: int
    b: int

    def __post_init__(self):
        if not 0 <= self.a < self.b:
            raise ValueError(f"invalid strip [{self.a}, {self.b}]")

    @property
    def n0(self) -> int:
        return self.b - self.a

    def check_within(self, horizon: int) -> None:
        if self.b > horizon:
            raise ValueError(f"strip [{self.a}, {self.b}] exceeds time range [0, {horizon}]")


@dataclass(frozen=True, eq=False)
class Environment:
    log_weights: np.ndarray
    beta: float = 1.0
    family: WeightFamily | None = None
    seed: int = 0
    stream: int = 0
    strip: StripSpec | None = None
    family_code: int = 0

    def __post_init__(self):
        if self.family is not None:
            object.__setattr__(self, "family_code", self.family.code)
        lw = np.ascontiguousarray(self.log_weights, dtype=np.float64)
        if lw.ndim != 2 or lw.size == 0:
            raise ValueError("log_weights must be a non-empty 2-d array")
        if not np.all(np.isfinite(lw)):
            raise ValueError("weights must be positive and finite")
        lw.flags.writeable = False
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def from_weights(cls, weights, **kwargs) -> "Environment":
        w = np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        return cls(np.log(w), **kwargs)

    @property
    def m(self) -> int:
        return self.log_weights.shape[0] - 1

    @property
    def n(self) -> int:
        return self.log_weights.shape[1] - 1

    @property
    def horizon(self) -> int:
        return self.m + self.n

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights)
        w.flags.writeable = False
        return w

    def with_log_weights(self, log_weights, strip=None) -> "Environment":
        return Environment(log_weights, self.beta, self.family, self.seed, self.stream,
                           strip or self.strip, self.family_code)

    # ---- serialization -------------------------------------------------

    def descriptor(self) -> dict:
        if self.family is None or self.strip is not None:
            raise ValueError("only unmodified sampled environments have a regenerating descriptor")
        return {
            "family": self.family.to_dict(),
            "beta": self.beta,
            "m": self.m,
            "n": self.n,
            "seed": self.seed,
            "stream": self.stream,
        }

    def to_bytes(self) -> bytes:
        head = struct.pack(_HEADER, MAGIC, self.m, self.n, self.family_code, float(self.beta), self.seed, self.stream)
        return head + self.log_weights.astype("<f8").tobytes(order="C")

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())


MAGIC = b"PLYENV1\x00"
_HEADER = "<8sqqqdQQ"
_HEADER_SIZE = struct.calcsize(_HEADER)


def environment_from_bytes(data: bytes) -> Environment:
    """Inverse of ``Environment.to_bytes``; the family is recovered only by type tag."""
    if len(data) < _HEADER_SIZE:
        raise ValueError("truncated environment file")
    magic, m, n, code, beta, seed, stream = struct.unpack_from(_HEADER, data)
    if magic != MAGIC:
        raise ValueError("not a PLYENV1 file")
    count = (m + 1) * (n + 1)
    body = data[_HEADER_SIZE:]
    if len(body) != 8 * count:
        raise ValueError(f"expected {count} log-weights, found {len(body) // 8}")
    lw = np.frombuffer(body, dtype="<f8").reshape(m + 1, n + 1).astype(np.float64)
    family = None
    if code == Constant.code:
        family = Constant(float(np.exp(lw[0, 0])))
    return Environment(lw, beta, family, seed, stream, family_code=code)


def load_environment(path) -> Environment:
    return environment_from_bytes(Path(path).read_bytes())


def environment_from_descriptor(d: dict | str) -> Environment:
    if isinstance(d, str):
        d = json.loads(d)
    return sample_environment(
        family_from_dict(d["family"]), float(d["beta"]), int(d["m"]), int(d["n"]),
        int(d["seed"]), int(d.get("stream", 0)),
    )


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------


def sample_environment(family: WeightFamily, beta: float, m: int, n: int,
                       seed: int, stream: int = 0) -> Environment:
    """Draw i.i.d. weights on ``(m+1) x (n+1)`` vertices, row-major in ``i``."""
    if m < 0 or n < 0:
        raise ValueError("lattice dimensions must be non-negative")
    if not beta > 0:
        raise ValueError("beta must be positive")
    family.check(beta)
    rng = make_rng(seed, stream)
    lw = family.sample_log_weights(rng, beta, (m + 1, n + 1))
    return Environment(np.asarray(lw, dtype=np.float64), beta, family, seed, stream)


def time_index(shape) -> np.ndarray:
    i, j = np.indices(shape)
    return i + j


def modify_strip(env: Environment, strip: StripSpec) -> Environment:
    """Set every weight with ``a <= i + j <= b`` to exactly one."""
    strip.check_within(env.horizon)
    t = time_index(env.log_weights.shape)
    lw = np.where((t >= strip.a) & (t <= strip.b), 0.0, env.log_weights)
    return env.with_log_weights(lw, strip=strip)


def check_event_Ws(env: Environment, s: float, M: float) -> bool:
    """True iff all weights lie in ``[exp(-M beta^s), exp(M beta^s)]``."""
    if not (0 < s < 1 and M > 0):
        raise ValueError("need 0 < s < 1 and M > 0")
    return bool(np.max(np.abs(env.log_weights)) <= M * env.beta**s)


@dataclass
class MomentFit:
    k: int
    betas: np.ndarray
    moments: np.ndarray
    slope: float
    intercept: float
    degenerate: bool = False


def assumption_moment_fit(family: WeightFamily, k: int, betas) -> MomentFit:
    """Least-squares slope of ``log E|omega - 1|^k`` against ``log beta``.

    A slope of at least ``k`` is what the small-beta moment condition predicts.
    Families whose weights equal one identically are reported as degenerate.
    """
    betas = np.asarray(betas, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    if betas.size < 4 or np.any(np.diff(betas) >= 0) or np.any(betas <= 0):
        raise ValueError("betas must be a decreasing positive grid with at least 4 points")
    moments = np.array([family.abs_central_moment(k, b) for b in betas])
    if not np.all(np.isfinite(moments)):
        raise ValueError("moment diverges on the requested grid")
    if np.all(moments == 0):
        return MomentFit(k, betas, moments, float("nan"), float("nan"), degenerate=True)
    slope, intercept = np.polyfit(np.log(betas), np.log(moments), 1)
    return MomentFit(k, betas, moments, float(slope), float(intercept))
