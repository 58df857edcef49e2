"""Exact sampling from the quenched polymer measure and path-geometry queries."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .environment import Environment, StripSpec
from .partition import LogPartitionField


@dataclass(frozen=True, eq=False)
class LatticePath:
    """Up-right path stored as its vertex sequence ``(L+1, 2)``."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) == 0:
            raise ValueError("vertices must have shape (L+1, 2)")
        steps = np.diff(v, axis=0)
        if len(steps) and not np.all((steps.sum(axis=1) == 1) & (steps.min(axis=1) == 0)):
            raise ValueError("every increment must be e1 or e2")
        v.flags.writeable = False
        object.__setattr__(self, "vertices", v)

    @classmethod
    def from_steps(cls, steps: str | list[int], start=(0, 0)) -> "LatticePath":
        """Steps given as ``"1"``/``"2"`` characters or ints (1 = e1, 2 = e2)."""
        inc = np.array([[1, 0] if int(s) == 1 else [0, 1] for s in steps], dtype=np.int64).reshape(-1, 2)
        verts = np.vstack([[0, 0], np.cumsum(inc, axis=0)]) + np.asarray(start)
        return cls(verts)

    @classmethod
    def from_i_coords(cls, i_coords, start_time: int = 0) -> "LatticePath":
        i = np.asarray(i_coords, dtype=np.int64)
        t = start_time + np.arange(len(i))
        return cls(np.column_stack([i, t - i]))

    def __len__(self) -> int:
        return len(self.vertices) - 1

    @property
    def start(self):
        return tuple(self.vertices[0])

    @property
    def end(self):
        return tuple(self.vertices[-1])

    def log_weight(self, env: Environment) -> float:
        return float(env.log_weights[self.vertices[:, 0], self.vertices[:, 1]].sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "i", "j"])
            for k, (i, j) in enumerate(self.vertices):
                w.writerow([k, int(i), int(j)])


@dataclass(frozen=True, eq=False)
class PathSample:
    path: LatticePath
    log_weight: float
    seed: int | None = None
    stream: int | None = None


def sample_i_coords(fwd: LogPartitionField, target, rng: np.random.Generator, size: int) -> np.ndarray:
    """Batch backward sampler.

    Returns ``(size, T+1)`` ints: the first coordinate of each path at every
    time ``0..T`` where ``T = target[0] + target[1]``.  ``fwd`` must be a
    forward field from (0, 0).
    """
    if fwd.direction != "forward" or fwd.origin != (0, 0):
        raise ValueError("sampling needs a forward field from the origin")
    m, n = target
    if not np.isfinite(fwd.logz[m, n]):
        raise ValueError("forward field does not cover the target")
    F = fwd.logz
    T = m + n
    out = np.empty((size, T + 1), dtype=np.int64)
    i = np.full(size, m, dtype=np.int64)
    out[:, T] = i
    for t in range(T, 0, -1):
        j = t - i
        left = np.where(i > 0, F[np.maximum(i - 1, 0), j], -np.inf)
        down = np.where(j > 0, F[i, np.maximum(j - 1, 0)], -np.inf)
        with np.errstate(invalid="ignore"):
            p_left = expit(left - down)
        p_left = np.where(j == 0, 1.0, np.where(i == 0, 0.0, p_left))
        i = i - (rng.random(size) < p_left)
        out[:, t - 1] = i
    return out


def sample_path(env: Environment, fwd: LogPartitionField, rng: np.random.Generator,
                seed: int | None = None, stream: int | None = None) -> PathSample:
    """One path from ``Q(pi) = l(pi)/Z`` by walking back from (m, n)."""
    i = sample_i_coords(fwd, (env.m, env.n), rng, 1)[0]
    path = LatticePath.from_i_coords(i)
    return PathSample(path, path.log_weight(env), seed, stream)


def path_codes(i_coords: np.ndarray) -> np.ndarray:
    """Encode each path (row of i-coordinates) as an integer bitmask of its e1 steps."""
    steps = np.diff(i_coords, axis=1)
    weights = 1 << np.arange(steps.shape[1], dtype=np.int64)
    return steps @ weights


def tf_numerator(path: LatticePath, r: int) -> int:
    """``2 * TF(pi, r) = y - x`` at the r-th vertex (an exact integer)."""
    if not 0 <= r <= len(path):
        raise ValueError(f"time {r} outside [0, {len(path)}]")
    x, y = path.vertices[r]
    return int(y - x)


def transversal_fluctuation(path: LatticePath, r: int) -> float:
    """``TF(pi, r) = pi(r) . e_s / 2`` with ``e_s = e2 - e1``."""
    return tf_numerator(path, r) / 2


def steep_indicator(path: LatticePath, strip: StripSpec) -> bool:
    """True iff the anti-diagonal slope across the strip exceeds 1/2 in absolute value.

    A slope of exactly +-1/2 is not steep.
    """
    if strip.b > len(path):
        raise ValueError("strip outside the path's time range")
    delta = tf_numerator(path, strip.b) - tf_numerator(path, strip.a)
    return 2 * abs(delta) > strip.n0


def steep_mask(i_coords: np.ndarray, strip: StripSpec, start_time: int = 0) -> np.ndarray:
    """Vectorized ``steep_indicator`` over a batch of i-coordinate rows."""
    a, b = strip.a - start_time, strip.b - start_time
    di = i_coords[:, b] - i_coords[:, a]
    delta = strip.n0 - 2 * di  # change in y - x
    return 2 * np.abs(delta) > strip.n0
