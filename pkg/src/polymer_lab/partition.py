"""Log-domain point-to-point partition functions.

Convention: ``Z_{u,v}`` sums over up-right paths from ``u`` to ``v`` the product
of *all* vertex weights on the path, both endpoints included.  Gluing two
partition functions at a shared vertex therefore subtracts that vertex's
log-weight once.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Literal

import numba
import numpy as np
from scipy.special import gammaln

from .environment import Environment

Vertex = tuple[int, int]


@numba.njit(inline="always")
def _logsum(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@numba.njit(cache=True)
def _forward_field(lw):
    m1, n1 = lw.shape
    out = np.empty((m1, n1))
    out[0, 0] = lw[0, 0]
    for j in range(1, n1):
        out[0, j] = out[0, j - 1] + lw[0, j]
    for i in range(1, m1):
        out[i, 0] = out[i - 1, 0] + lw[i, 0]
        for j in range(1, n1):
            out[i, j] = lw[i, j] + _logsum(out[i - 1, j], out[i, j - 1])
    return out


@numba.njit(cache=True)
def _forward_terminal(lw):
    m1, n1 = lw.shape
    row = np.empty(n1)
    row[0] = lw[0, 0]
    for j in range(1, n1):
        row[j] = row[j - 1] + lw[0, j]
    for i in range(1, m1):
        row[0] += lw[i, 0]
        for j in range(1, n1):
            row[j] = lw[i, j] + _logsum(row[j], row[j - 1])
    return row[n1 - 1]


def logsum(a: float, b: float) -> float:
    """log(exp(a) + exp(b)) as max + log1p(exp(-|a - b|))."""
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = (a, b) if a > b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def logsub(a: float, b: float) -> float:
    """log(exp(a) - exp(b)) for a >= b; -inf when they coincide."""
    if b > a:
        raise ValueError("logsub needs a >= b")
    if b == -math.inf:
        return a
    if b == a:
        return -math.inf
    return a + math.log(-math.expm1(b - a))


@dataclass(frozen=True, eq=False)
class PointPair:
    u: Vertex
    v: Vertex

    def __post_init__(self):
        if not (self.u[0] <= self.v[0] and self.u[1] <= self.v[1]):
            raise ValueError(f"pair {self.u} -> {self.v} is not ordered coordinatewise")

    def check_inside(self, env: Environment) -> None:
        for p in (self.u, self.v):
            _check_vertex(env, p)

    @property
    def path_count(self) -> int:
        di, dj = self.v[0] - self.u[0], self.v[1] - self.u[1]
        return math.comb(di + dj, di)


def _check_vertex(env: Environment, p: Vertex) -> None:
    if not (0 <= p[0] <= env.m and 0 <= p[1] <= env.n):
        raise ValueError(f"vertex {p} outside the {env.m}x{env.n} lattice")


@dataclass(frozen=True, eq=False)
class LogPartitionField:
    """``log Z`` from ``origin`` (forward) or to ``origin`` (backward) over its quadrant.

    ``logz`` is indexed by absolute lattice coordinates; entries outside the
    reachable quadrant are ``-inf``.
    """

    origin: Vertex
    logz: np.ndarray
    direction: Literal["forward", "backward"] = "forward"

    def __getitem__(self, vertex: Vertex) -> float:
        return float(self.logz[vertex])

    def reaches(self, vertex: Vertex) -> bool:
        i, j = vertex
        if self.direction == "forward":
            return i >= self.origin[0] and j >= self.origin[1]
        return i <= self.origin[0] and j <= self.origin[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "logZ"])
            for (i, j), val in np.ndenumerate(self.logz):
                if np.isfinite(val):
                    w.writerow([i, j, repr(float(val))])


def log_partition_field(env: Environment, origin: Vertex | None = None,
                        direction: str = "forward") -> LogPartitionField:
    """One DP sweep giving ``log Z_{origin, x}`` (forward) or ``log Z_{x, origin}`` (backward)."""
    lw = env.log_weights
    if direction == "forward":
        origin = (0, 0) if origin is None else tuple(origin)
        _check_vertex(env, origin)
        full = np.full(lw.shape, -np.inf)
        full[origin[0]:, origin[1]:] = _forward_field(np.ascontiguousarray(lw[origin[0]:, origin[1]:]))
    elif direction == "backward":
        origin = (env.m, env.n) if origin is None else tuple(origin)
        _check_vertex(env, origin)
        full = np.full(lw.shape, -np.inf)
        sub = lw[: origin[0] + 1, : origin[1] + 1][::-1, ::-1]
        full[: origin[0] + 1, : origin[1] + 1] = _forward_field(np.ascontiguousarray(sub))[::-1, ::-1]
    else:
        raise ValueError(f"unknown direction {direction!r}")
    full.flags.writeable = False
    return LogPartitionField(origin, full, direction)


def log_partition_between(pair: PointPair, env: Environment,
                          fwd: LogPartitionField | None = None,
                          bwd: LogPartitionField | None = None) -> float:
    """``log Z_{u,v}``, read from a cached field when one starts at ``u`` or ends at ``v``."""
    pair.check_inside(env)
    u, v = pair.u, pair.v
    if fwd is not None and fwd.direction == "forward" and fwd.origin == u:
        return fwd[v]
    if bwd is not None and bwd.direction == "backward" and bwd.origin == v:
        return bwd[u]
    sub = env.log_weights[u[0]: v[0] + 1, u[1]: v[1] + 1]
    return float(_forward_terminal(np.ascontiguousarray(sub)))


def free_energy(env: Environment) -> float:
    """``log Z`` from (0, 0) to (m, n) with O(n) memory."""
    return float(_forward_terminal(env.log_weights))


def free_energy_from_log_weights(lw: np.ndarray) -> float:
    return float(_forward_terminal(np.ascontiguousarray(lw, dtype=np.float64)))


MAX_ENUMERATED_PATHS = 10**6


def iter_paths(u: Vertex, v: Vertex):
    """Yield every up-right path from ``u`` to ``v`` as an ``(L+1, 2)`` int array."""
    di, dj = v[0] - u[0], v[1] - u[1]
    L = di + dj
    for pos in itertools.combinations(range(L), di):
        steps = np.zeros((L, 2), dtype=np.int64)
        steps[:, 1] = 1
        if di:
            steps[list(pos)] = (1, 0)
        verts = np.empty((L + 1, 2), dtype=np.int64)
        verts[0] = u
        np.cumsum(steps, axis=0, out=verts[1:])
        verts[1:] += np.asarray(u)
        yield verts


def enumerate_path_log_weights(env: Environment, pair: PointPair) -> np.ndarray:
    if pair.path_count > MAX_ENUMERATED_PATHS:
        raise ValueError(f"{pair.path_count} paths exceeds the enumeration guard")
    lw = env.log_weights
    return np.array([lw[p[:, 0], p[:, 1]].sum() for p in iter_paths(pair.u, pair.v)])


def brute_force_log_partition(env: Environment, pair: PointPair | None = None) -> float:
    """Exhaustive ``log Z_{u,v}``; test oracle independent of the DP."""
    if pair is None:
        pair = PointPair((0, 0), (env.m, env.n))
    pair.check_inside(env)
    logs = enumerate_path_log_weights(env, pair)
    top = float(np.max(logs))
    return top + math.log(math.fsum(np.exp(logs - top)))


def log_binomial(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    out = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return np.where((k < 0) | (k > n), -np.inf, out)


def cut_line_log_masses(env: Environment, r: int, fwd: LogPartitionField,
                        bwd: LogPartitionField) -> tuple[np.ndarray, np.ndarray]:
    """Vertices ``i`` on the line ``i + j = r`` and ``log Q(pi(r) = (i, r-i))``.

    ``fwd`` must start at (0, 0) and ``bwd`` end at (m, n).
    """
    if not 0 <= r <= env.horizon:
        raise ValueError(f"time {r} outside [0, {env.horizon}]")
    i = np.arange(max(0, r - env.n), min(r, env.m) + 1)
    j = r - i
    logz = fwd.logz[env.m, env.n]
    mass = fwd.logz[i, j] + bwd.logz[i, j] - env.log_weights[i, j] - logz
    return i, mass
