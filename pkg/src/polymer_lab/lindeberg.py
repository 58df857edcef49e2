"""One-vertex-at-a-time replacement between two weight families.

For a vertex ``v`` the partition function is affine in its weight::

    Z = V(v) + omega_v * W(v)

where ``W`` sums over paths through ``v`` with ``omega_v`` left out and ``V``
over paths avoiding ``v``.  The replacement error at ``v`` is the expected
change of a smooth test function of the rescaled free energy when ``omega_v``
is swapped for an independent draw from the other family.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .environment import Constant, Environment, TwoPoint, WeightFamily, sample_environment
from .parallel import replica_map
from .partition import LogPartitionField, free_energy, log_partition_field, logsub, logsum
from .rng import derive_seed
from .scaling import ModelConstants, rescale_free_energy
from .tracy_widom import DistributionTable, ks_distance, ks_two_sample


class PrecisionWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# test functions with bounded derivatives
# --------------------------------------------------------------------------


def _bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
    return out


TEST_FUNCTIONS: dict[str, Callable] = {
    "tanh": lambda x: np.tanh(np.asarray(x) / 2),
    "gauss": lambda x: np.exp(-0.5 * np.square(x)),
    "bump": _bump,
    "bump3": lambda x: _bump(np.asarray(x) / 3.0),
}


def test_function(name_or_func) -> Callable:
    if callable(name_or_func):
        return name_or_func
    try:
        return TEST_FUNCTIONS[name_or_func]
    except KeyError:
        raise ValueError(f"unknown test function {name_or_func!r}") from None


# --------------------------------------------------------------------------
# hybrid environments
# --------------------------------------------------------------------------


def time_order(m: int, n: int) -> np.ndarray:
    """Vertices sorted by time ``i + j``, then by ``i``."""
    i, j = np.indices((m + 1, n + 1))
    verts = np.column_stack([i.ravel(), j.ravel()])
    return verts[np.lexsort((verts[:, 0], verts.sum(axis=1)))]


@dataclass(frozen=True, eq=False)
class HybridEnvironment:
    """Weights at ``order[:cursor]`` come from ``target``, the rest from ``base``."""

    base: Environment
    target: Environment
    order: np.ndarray
    cursor: int = 0

    def __post_init__(self):
        if self.base.log_weights.shape != self.target.log_weights.shape:
            raise ValueError("base and target must share a lattice")
        if not 0 <= self.cursor <= len(self.order):
            raise ValueError("cursor out of range")

    @classmethod
    def at_vertex(cls, base, target, v, order=None) -> "HybridEnvironment":
        order = time_order(base.m, base.n) if order is None else np.asarray(order)
        pos = int(np.flatnonzero((order[:, 0] == v[0]) & (order[:, 1] == v[1]))[0])
        return cls(base, target, order, pos)

    @property
    def vertex(self) -> tuple[int, int]:
        return tuple(int(c) for c in self.order[self.cursor])

    def log_weights(self) -> np.ndarray:
        lw = self.base.log_weights.copy()
        done = self.order[: self.cursor]
        lw[done[:, 0], done[:, 1]] = self.target.log_weights[done[:, 0], done[:, 1]]
        return lw

    def environment(self) -> Environment:
        return self.base.with_log_weights(self.log_weights())

    def advance(self) -> "HybridEnvironment":
        return HybridEnvironment(self.base, self.target, self.order, self.cursor + 1)


# --------------------------------------------------------------------------
# decomposition
# --------------------------------------------------------------------------


def vw_decomposition(fwd: LogPartitionField, bwd: LogPartitionField, env: Environment,
                     v) -> tuple[float, float]:
    """``(log W(v), log V(v))`` with ``Z = V + omega_v W``."""
    v = tuple(v)
    if not (0 <= v[0] <= env.m and 0 <= v[1] <= env.n):
        raise ValueError(f"vertex {v} outside the lattice")
    lwv = env.log_weights[v]
    log_w = fwd[v] + bwd[v] - 2.0 * lwv
    log_z = fwd[(env.m, env.n)]
    through = lwv + log_w
    if v == (0, 0) or v == (env.m, env.n) or env.m == 0 or env.n == 0:
        # every path visits this vertex
        return log_w, -math.inf
    gap = log_z - through
    if gap < 1e-12:
        warnings.warn(f"V({v}) is below working precision", PrecisionWarning, stacklevel=2)
    return log_w, logsub(log_z, min(through, log_z))


def _log_z_with(log_v: float, log_w: float, log_omega) -> np.ndarray:
    return np.logaddexp(log_v, np.asarray(log_omega) + log_w)


# --------------------------------------------------------------------------
# replacement error
# --------------------------------------------------------------------------


@dataclass
class ZetaEstimate:
    vertex: tuple[int, int]
    mean: float
    stderr: float
    samples: int


def _discrete_outcomes(family: WeightFamily, beta: float):
    if isinstance(family, TwoPoint):
        return np.log([family.v1, family.v2]), np.array([family.p, 1 - family.p])
    if isinstance(family, Constant):
        return np.array([math.log(family.value)]), np.array([1.0])
    return None


def _standardize(log_z, constants: ModelConstants):
    return rescale_free_energy(log_z, constants, mode="transfer")


def _zeta_replica(index, family_a, family_b, v, f, constants, seed, shared, order):
    n, beta = constants.n, constants.beta
    sa = derive_seed(seed, "zeta-base", index)
    base = sample_environment(family_a, beta, n, n, *sa)
    target = base if shared else sample_environment(family_b, beta, n, n, *derive_seed(seed, "zeta-target", index))
    hybrid = HybridEnvironment.at_vertex(base, target, v, order).environment()
    fwd = log_partition_field(hybrid)
    bwd = log_partition_field(hybrid, direction="backward")
    log_w, log_v = vw_decomposition(fwd, bwd, hybrid, v)
    da = _discrete_outcomes(family_a, beta)
    db = _discrete_outcomes(family_b, beta)
    if da is not None and db is not None and not shared:
        # exact inner expectation over the independent pair (omega_v, omega'_v)
        xa = f(_standardize(_log_z_with(log_v, log_w, da[0]), constants))
        xb = f(_standardize(_log_z_with(log_v, log_w, db[0]), constants))
        return float(np.sum(da[1][:, None] * db[1][None, :] * np.abs(xa[:, None] - xb[None, :])))
    xa = f(_standardize(logsum(log_v, log_w + base.log_weights[v]), constants))
    xb = f(_standardize(logsum(log_v, log_w + target.log_weights[v]), constants))
    return float(abs(xa - xb))


def zeta_v(family_a: WeightFamily, family_b: WeightFamily, v, f, constants: ModelConstants,
           budget: int = 1000, seed: int = 0, shared: bool = False, order=None,
           workers: int = 1) -> ZetaEstimate:
    """Monte Carlo replacement error at ``v`` on the ``n x n`` lattice of ``constants``.

    The lattice is a hybrid: vertices before ``v`` in ``order`` carry weights from
    ``family_b``, those after from ``family_a``.  ``shared=True`` couples the two
    environments to the same draw, which makes the error vanish identically.
    """
    if budget < 2:
        raise ValueError("budget too small for an error estimate")
    f = test_function(f)
    v = tuple(v)
    job = partial(_zeta_replica, family_a=family_a, family_b=family_b, v=v, f=f,
                  constants=constants, seed=seed, shared=shared, order=order)
    vals = np.array(replica_map(job, range(budget), workers))
    return ZetaEstimate(v, float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(budget)), budget)


def zeta_v_exact(family_a: WeightFamily, family_b: WeightFamily, v, f,
                 constants: ModelConstants, order=None) -> float:
    """Exact replacement error by enumerating every discrete weight outcome.

    Both families must be ``TwoPoint`` or ``Constant``; feasible for lattices with
    up to about 20 vertices.
    """
    f = test_function(f)
    n, beta = constants.n, constants.beta
    da, db = _discrete_outcomes(family_a, beta), _discrete_outcomes(family_b, beta)
    if da is None or db is None:
        raise ValueError("exact replacement error needs discrete weight families")
    order = time_order(n, n) if order is None else np.asarray(order)
    v = tuple(v)
    pos = int(np.flatnonzero((order[:, 0] == v[0]) & (order[:, 1] == v[1]))[0])
    others = [tuple(o) for k, o in enumerate(order) if k != pos]
    if len(others) > 22:
        raise ValueError("lattice too large for exhaustive enumeration")
    choices = []
    for k, o in enumerate(order):
        if k == pos:
            continue
        choices.append(db if k < pos else da)
    # all configurations of the other vertices, as index tuples
    grids = np.array(list(itertools.product(*[range(len(c[0])) for c in choices])))
    lw_cfg = np.stack([choices[c][0][grids[:, c]] for c in range(len(choices))], axis=1)
    p_cfg = np.prod(np.stack([choices[c][1][grids[:, c]] for c in range(len(choices))], axis=1), axis=1)
    B = len(grids)
    w = np.zeros((B, n + 1, n + 1))
    for c, o in enumerate(others):
        w[:, o[0], o[1]] = np.exp(lw_cfg[:, c])
    # Z is affine in omega_v: V = Z(omega_v = 0), W = Z(1) - V
    V = _batched_z(w, v, 0.0)
    W = _batched_z(w, v, 1.0) - V
    xa = f(_standardize(np.log(V[:, None] + np.exp(da[0])[None, :] * W[:, None]), constants))
    xb = f(_standardize(np.log(V[:, None] + np.exp(db[0])[None, :] * W[:, None]), constants))
    diff = np.abs(xa[:, :, None] - xb[:, None, :])
    inner = np.einsum("bij,i,j->b", diff, da[1], db[1])
    return float(np.dot(p_cfg, inner))


def _batched_z(w: np.ndarray, v, value: float) -> np.ndarray:
    w = w.copy()
    w[:, v[0], v[1]] = value
    _, m1, n1 = w.shape
    z = np.zeros_like(w)
    for i in range(m1):
        for j in range(n1):
            acc = 0.0 if (i or j) else 1.0
            if i:
                acc = acc + z[:, i - 1, j]
            if j:
                acc = acc + z[:, i, j - 1]
            z[:, i, j] = w[:, i, j] * acc
    return z[:, -1, -1]


# --------------------------------------------------------------------------
# strip sweep
# --------------------------------------------------------------------------


def lambda_exponent(alpha: float, K: int, delta: float) -> float:
    """Exponent of the total replacement error ``n^lambda log n``.

    The error is ``beta^{K+1} / (beta^{4/3} n^{1/3}) * n / n0`` with
    ``beta = n^-alpha`` and ``n0 = beta^{-4(1-delta)}``, so it decays exactly when
    ``alpha`` exceeds ``(2/3) / (K + 1 - 4/3 + 4(1 - delta))``.
    """
    return 2.0 / 3.0 - ((K + 1) - 4.0 / 3.0 + 4.0 * (1.0 - delta)) * alpha


def alpha_threshold(K: int) -> float:
    return 2.0 / (3 * K + 11)


def has_decaying_delta(alpha: float, K: int, deltas=None) -> bool:
    if deltas is None:
        deltas = np.geomspace(1e-14, 0.25, 200)
    return any(lambda_exponent(alpha, K, d) < 0 for d in deltas)


def scan_alpha_threshold(K: int, tol: float = 1e-10) -> float:
    """Bisection for ``inf{alpha in (0, 1/4): some delta > 0 gives lambda < 0}``."""
    lo, hi = 0.0, 0.25
    if not has_decaying_delta(hi, K):
        return math.nan
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if has_decaying_delta(mid, K):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class ReplacementReport:
    n: int
    alpha: float
    delta: float
    K: int
    n0: int
    lam: float
    delta0_sum: float
    delta0_stderr: float
    strip_sums: list[float]
    strip_stderrs: list[float]
    strip_bounds: list[tuple[int, int]]
    total: float
    predicted_order: float
    per_vertex: list[ZetaEstimate] = field(default_factory=list)
    assignment: dict = field(default_factory=dict)
    seed: int = 0

    def lambda_consistent(self) -> bool:
        return math.isclose(self.lam, lambda_exponent(self.alpha, self.K, self.delta), rel_tol=0, abs_tol=1e-15)

    def summary(self) -> dict:
        return {
            "n": self.n, "alpha": self.alpha, "delta": self.delta, "K": self.K, "n0": self.n0,
            "lambda": self.lam, "delta0_sum": self.delta0_sum, "delta0_stderr": self.delta0_stderr,
            "strip_sums": self.strip_sums, "strip_stderrs": self.strip_stderrs,
            "strip_bounds": [list(b) for b in self.strip_bounds], "total": self.total,
            "predicted_order": self.predicted_order, "seed": self.seed,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "block", "zeta", "stderr", "samples"])
            for z in self.per_vertex:
                w.writerow([z.vertex[0], z.vertex[1], self.assignment.get(z.vertex, -1),
                            repr(z.mean), repr(z.stderr), z.samples])


def block_assignment(n: int, n0: int) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Block index per vertex (0 for near-endpoint vertices) and the strip time bounds."""
    t = np.add.outer(np.arange(n + 1), np.arange(n + 1))
    edge = n ** (1 / 6)
    block = np.zeros_like(t)
    inner = (t > edge) & (t < 2 * n - edge)
    t_lo = math.floor(edge) + 1
    block[inner] = (t[inner] - t_lo) // n0 + 1
    bounds = []
    for b in range(1, int(block.max()) + 1):
        ts = t[block == b]
        bounds.append((int(ts.min()), int(ts.max())))
    return block, bounds


def strip_sweep(family_a: WeightFamily, family_b: WeightFamily, constants: ModelConstants,
                delta: float, K: int, f="tanh", budget: int = 200, vertices_per_block: int = 3,
                seed: int = 0, full: bool = False, workers: int = 1) -> ReplacementReport:
    """Estimate the near-endpoint and per-strip replacement error totals.

    Vertex errors are averaged over a deterministic subsample of each block and
    scaled by the block size (all vertices when ``full``).
    """
    n, beta = constants.n, constants.beta
    alpha = constants.alpha if constants.alpha is not None else -math.log(beta) / math.log(n)
    if n ** (1 / 6) < 2:
        raise ValueError("strip sweep needs n^(1/6) >= 2")
    n0 = max(1, int(round(beta ** (-4 * (1 - delta)))))
    if n0 > n / 4:
        raise ValueError(f"strip length n0={n0} exceeds n/4")
    lam = lambda_exponent(alpha, K, delta)
    block, bounds = block_assignment(n, n0)
    order = time_order(n, n)
    per_vertex = []
    assignment = {}
    sums, ses = [], []
    for b in range(0, len(bounds) + 1):
        verts = np.argwhere(block == b)
        if len(verts) == 0:
            sums.append(0.0)
            ses.append(0.0)
            continue
        if not full and len(verts) > vertices_per_block:
            pick = np.linspace(0, len(verts) - 1, vertices_per_block).round().astype(int)
            chosen = verts[pick]
        else:
            chosen = verts
        ests = []
        for v in chosen:
            v = (int(v[0]), int(v[1]))
            z = zeta_v(family_a, family_b, v, f, constants, budget,
                       seed=hash_vertex(seed, v), order=order, workers=workers)
            per_vertex.append(z)
            assignment[v] = b
            ests.append(z)
        means = np.array([z.mean for z in ests])
        errs = np.array([z.stderr for z in ests])
        scale = len(verts) / len(ests)
        sums.append(float(means.sum() * scale))
        ses.append(float(math.sqrt(np.sum(errs**2)) * scale))
    total = float(sum(sums))
    return ReplacementReport(
        n=n, alpha=alpha, delta=delta, K=K, n0=n0, lam=lam,
        delta0_sum=sums[0], delta0_stderr=ses[0], strip_sums=sums[1:], strip_stderrs=ses[1:],
        strip_bounds=bounds, total=total, predicted_order=n**lam * math.log(n),
        per_vertex=per_vertex, assignment=assignment, seed=seed,
    )


def hash_vertex(seed: int, v) -> int:
    return derive_seed(seed, f"vertex-{v[0]}-{v[1]}", 0)[0]


# --------------------------------------------------------------------------
# distribution transfer
# --------------------------------------------------------------------------


def family_moment_gaps(family_a: WeightFamily, family_b: WeightFamily, beta: float, K: int) -> list[float]:
    gaps = []
    for k in range(1, K + 1):
        la, lb = family_a.log_moment(k, beta), family_b.log_moment(k, beta)
        gaps.append(abs(math.exp(lb) * math.expm1(la - lb)))
    return gaps


@dataclass
class TransferReport:
    samples_a: np.ndarray
    samples_b: np.ndarray
    ks_two_sample: float
    ks_a_tw: float | None
    ks_b_tw: float | None
    moment_gaps: list[float]
    warnings: list[str]
    mode: str
    seeds_a: list
    seeds_b: list
    log_z_a: np.ndarray | None = None
    log_z_b: np.ndarray | None = None

    def summary(self) -> dict:
        return {
            "ks_two_sample": self.ks_two_sample, "ks_a_tw": self.ks_a_tw, "ks_b_tw": self.ks_b_tw,
            "moment_gaps": self.moment_gaps, "warnings": self.warnings, "mode": self.mode,
            "replicas": [len(self.samples_a), len(self.samples_b)],
            "mean_a": float(np.mean(self.samples_a)), "var_a": float(np.var(self.samples_a, ddof=1)),
            "mean_b": float(np.mean(self.samples_b)), "var_b": float(np.var(self.samples_b, ddof=1)),
        }


def _free_energy_replica(index, family, beta, n, seed, label):
    s = derive_seed(seed, label, index)
    return free_energy(sample_environment(family, beta, n, n, *s)), s


def free_energy_batch(family: WeightFamily, beta: float, n: int, replicas: int, seed: int,
                      label: str, workers: int = 1) -> tuple[np.ndarray, list]:
    job = partial(_free_energy_replica, family=family, beta=beta, n=n, seed=seed, label=label)
    out = replica_map(job, range(replicas), workers, chunksize=16)
    return np.array([o[0] for o in out]), [list(o[1]) for o in out]


def distribution_transfer_experiment(family_a: WeightFamily, family_b: WeightFamily,
                                     constants: ModelConstants, replicas: int, seed: int = 0,
                                     K: int = 2, table: DistributionTable | None = None,
                                     mode: str = "exact", shared_seeds: bool = False,
                                     workers: int = 1) -> TransferReport:
    """Rescaled free energies under both families and their KS distances."""
    n, beta = constants.n, constants.beta
    gaps = family_moment_gaps(family_a, family_b, beta, K)
    notes = []
    if gaps[0] > 1e-10 or gaps[1] > 1e-10:
        notes.append(f"first two moments differ: gaps {gaps[:2]}")
    la, sa = free_energy_batch(family_a, beta, n, replicas, seed, "transfer-A", workers)
    lb, sb = free_energy_batch(family_b, beta, n, replicas, seed,
                               "transfer-A" if shared_seeds else "transfer-B", workers)
    xa = rescale_free_energy(la, constants, mode=mode)
    xb = rescale_free_energy(lb, constants, mode=mode)
    ka = kb = None
    if table is not None:
        ka, kb = ks_distance(xa, table), ks_distance(xb, table)
    return TransferReport(xa, xb, ks_two_sample(xa, xb), ka, kb, gaps, notes, mode, sa, sb, la, lb)
