"""Transversal-fluctuation and steep-path experiments.

Each experiment averages, over environments conditioned on the bounded-weight
event ``W_s``, a quenched polymer probability.  Two estimators are available:

* ``method="exact"``  -- the quenched probability of each environment is computed
  exactly by summing ``Z_{0,u} Z_{u,end} / omega_u`` over the cut line;
* ``method="sample"`` -- paths are drawn from the polymer measure and counted.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np
from scipy.special import logsumexp

from .environment import (Environment, StripSpec, check_event_Ws, family_from_dict,
                          modify_strip, sample_environment)
from .parallel import replica_map
from .partition import (PointPair, cut_line_log_masses, enumerate_path_log_weights, iter_paths,
                        log_binomial, log_partition_field)
from .rng import derive_seed, make_rng
from .sampler import sample_i_coords, steep_mask
from .stats import binomial_stderr, linear_fit, zero_hit_upper

MAX_RETRIES = 1000


class RejectionError(RuntimeError):
    """Too many environments failed the bounded-weight event."""


@dataclass
class FluctuationConfig:
    n: int
    alpha: float = 0.2
    s: float = 0.5
    M: float = 5.0
    r: int | None = None
    t_grid: list[float] | None = None
    gamma: float = 0.5
    strip: StripSpec | None = None
    n0_grid: list[int] | None = None
    n_grid: list[int] | None = None
    replicas: int = 1000
    seed: int = 0
    family: dict = field(default_factory=lambda: {"kind": "log_gamma"})
    method: str = "exact"
    samples: int = 1000
    workers: int = 1
    enforce_local: bool = True

    def __post_init__(self):
        if isinstance(self.strip, (list, tuple)):
            self.strip = StripSpec(*self.strip)
        if self.method not in ("exact", "sample"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def beta(self) -> float:
        return self.n ** (-self.alpha)

    def echo(self) -> dict:
        d = asdict(self)
        # scheduling does not affect results
        d.pop("workers")
        d["strip"] = None if self.strip is None else [self.strip.a, self.strip.b]
        return d


@dataclass
class DecayFitReport:
    x: np.ndarray
    regressor: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    upper_bound: np.ndarray
    quenched_max: np.ndarray
    events: np.ndarray | None = None
    trials: np.ndarray | None = None
    c: float = math.nan
    intercept: float = math.nan
    r2: float = math.nan
    residuals: np.ndarray = field(default_factory=lambda: np.array([]))
    fit_mask: np.ndarray | None = None
    rejections: int = 0
    environments: int = 0
    x_name: str = "t"
    config: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)

    @property
    def log_estimate(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.estimate)

    @property
    def log_stderr(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.stderr / self.estimate

    def monotone_violations(self, nsigma: float = 3.0) -> int:
        """Count increases in the estimate larger than ``nsigma`` combined standard errors."""
        d = np.diff(self.estimate)
        tol = nsigma * np.hypot(self.stderr[1:], self.stderr[:-1])
        return int(np.sum(d > tol))

    def rows(self):
        for k in range(len(self.x)):
            yield {
                self.x_name: float(self.x[k]),
                "regressor": float(self.regressor[k]),
                "estimate": float(self.estimate[k]),
                "stderr": float(self.stderr[k]),
                "upper_bound": bool(self.upper_bound[k]),
                "quenched_max": float(self.quenched_max[k]),
                "events": None if self.events is None else int(self.events[k]),
                "trials": None if self.trials is None else int(self.trials[k]),
            }

    def to_csv(self, path) -> None:
        rows = list(self.rows())
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)

    def summary(self) -> dict:
        return {
            "fitted_c": self.c,
            "intercept": self.intercept,
            "r2": self.r2,
            "residuals": [float(v) for v in self.residuals],
            "fit_points": None if self.fit_mask is None else [bool(v) for v in self.fit_mask],
            "rejections": self.rejections,
            "environments": self.environments,
            "config": self.config,
            "seeds": self.seeds,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# environment generation conditioned on W_s
# --------------------------------------------------------------------------


def conditioned_environment(family: dict, beta: float, n: int, s: float, M: float,
                            master_seed: int, label: str, index: int):
    """Sample until ``W_s`` holds; returns (env, rejections, (seed, stream))."""
    fam = family_from_dict(family)
    for attempt in range(MAX_RETRIES):
        seed, stream = derive_seed(master_seed, f"{label}#{attempt}", index)
        env = sample_environment(fam, beta, n, n, seed, stream)
        if check_event_Ws(env, s, M):
            return env, attempt, (seed, stream)
    raise RejectionError(f"replica {index}: W_s failed {MAX_RETRIES} times")


def _check_rejections(rejections: int, accepted: int) -> None:
    if accepted and rejections / (rejections + accepted) > 0.5:
        raise RejectionError(f"W_s rejection rate {rejections}/{rejections + accepted} exceeds 50%")


# --------------------------------------------------------------------------
# transversal fluctuations
# --------------------------------------------------------------------------


def quenched_tail(env: Environment, r: int, thresholds, fwd=None, bwd=None) -> np.ndarray:
    """Exact ``Q(|TF(pi, r)| >= x)`` for each threshold ``x``."""
    fwd = fwd or log_partition_field(env)
    bwd = bwd or log_partition_field(env, direction="backward")
    i, mass = cut_line_log_masses(env, r, fwd, bwd)
    tf = np.abs(r - 2 * i) / 2.0
    out = []
    for x in np.atleast_1d(thresholds):
        sel = tf >= x
        out.append(math.exp(min(0.0, logsumexp(mass[sel]))) if sel.any() else 0.0)
    return np.array(out)


def all_ones_tail(m: int, n: int, r: int, x: float) -> float:
    """``Q(|TF(pi, r)| >= x)`` for constant weights: hypergeometric cut-line sum."""
    i = np.arange(max(0, r - n), min(r, m) + 1)
    logc = log_binomial(r, i) + log_binomial(m + n - r, m - i) - log_binomial(m + n, m)
    sel = np.abs(r - 2 * i) / 2.0 >= x
    return float(np.exp(logsumexp(logc[sel]))) if sel.any() else 0.0


def _fluct_replica(index, cfg: FluctuationConfig, r: int, thresholds, label: str):
    env, rej, seeds = conditioned_environment(cfg.family, cfg.beta, cfg.n, cfg.s, cfg.M,
                                              cfg.seed, label, index)
    if cfg.method == "exact":
        probs = quenched_tail(env, r, thresholds)
        return probs, None, rej, seeds
    fwd = log_partition_field(env)
    rng = make_rng(*derive_seed(seeds[0], "paths", seeds[1]))
    ic = sample_i_coords(fwd, (cfg.n, cfg.n), rng, cfg.samples)
    tf = np.abs(r - 2 * ic[:, r]) / 2.0
    hits = np.array([int(np.sum(tf >= x)) for x in thresholds])
    return hits / cfg.samples, hits, rej, seeds


def auto_t_grid(n_eff: int, scale: float, points: int = 8) -> np.ndarray:
    """Thresholds spanning 0.25 to 1.5 sqrt(n_eff) in TF units, as t values."""
    k = np.linspace(0.25, 1.5, points) * math.sqrt(n_eff)
    return k / scale


def _run_tail(cfg: FluctuationConfig, r: int, time_scale: int, label: str) -> DecayFitReport:
    exponent = 1.0 - cfg.s * cfg.alpha
    scale = time_scale ** (1.0 - cfg.s * cfg.alpha / 2.0)
    t = np.asarray(cfg.t_grid if cfg.t_grid is not None else auto_t_grid(time_scale, scale), dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    thresholds = t * scale
    job = partial(_fluct_replica, cfg=cfg, r=r, thresholds=thresholds, label=label)
    results = replica_map(job, range(cfg.replicas), cfg.workers)
    probs = np.array([res[0] for res in results])
    rejections = sum(res[2] for res in results)
    _check_rejections(rejections, cfg.replicas)
    quenched_max = probs.max(axis=0)
    events = trials = None
    if cfg.method == "exact":
        estimate = probs.mean(axis=0)
        stderr = probs.std(axis=0, ddof=1) / math.sqrt(cfg.replicas) if cfg.replicas > 1 else np.zeros_like(estimate)
        upper = np.zeros(len(t), dtype=bool)
    else:
        events = np.array([res[1] for res in results]).sum(axis=0)
        N = cfg.replicas * cfg.samples
        trials = np.full(len(t), N)
        estimate = events / N
        stderr = binomial_stderr(events, N)
        upper = events == 0
        estimate = np.where(upper, zero_hit_upper(N), estimate)
    report = DecayFitReport(
        x=t, regressor=t**2 * time_scale**exponent, estimate=estimate, stderr=stderr,
        upper_bound=upper, quenched_max=quenched_max, events=events, trials=trials,
        rejections=rejections, environments=cfg.replicas, x_name="t", config=cfg.echo(),
        seeds=[list(res[3]) for res in results],
    )
    return _fit_decay(report)


def _fit_decay(report: DecayFitReport) -> DecayFitReport:
    """Fit ``log P = intercept - c * regressor`` on points with resolvable, nontrivial probability."""
    mask = (~report.upper_bound) & (report.estimate > 0) & (report.estimate < 1) & (report.regressor > 0)
    report.fit_mask = mask
    if mask.sum() >= 2:
        fit = linear_fit(report.regressor[mask], np.log(report.estimate[mask]))
        report.c, report.intercept, report.r2, report.residuals = -fit.slope, fit.intercept, fit.r2, fit.residuals
    return report


def global_fluct_probability(cfg: FluctuationConfig) -> DecayFitReport:
    """``E_env Q_n(|TF(pi, n)| >= t n^{1 - s alpha/2})`` on a t-grid, with quadratic decay fit."""
    return _run_tail(cfg, cfg.n, cfg.n, "global")


def local_fluct_probability(cfg: FluctuationConfig) -> DecayFitReport:
    """Same at an interior time ``r``; thresholds ``t r^{1 - s alpha/2}``."""
    r = cfg.r
    if r is None or not 0 < r <= 2 * cfg.n:
        raise ValueError("local fluctuations need 0 < r <= 2n")
    if cfg.enforce_local and r > cfg.n / 10:
        raise ValueError("local fluctuations need r <= n/10 (set enforce_local=False to override)")
    return _run_tail(cfg, r, r, "global" if r == cfg.n else f"local-{r}")


# --------------------------------------------------------------------------
# steep paths
# --------------------------------------------------------------------------


def centered_strip(n: int, n0: int) -> StripSpec:
    a = n - n0 // 2
    return StripSpec(a, a + n0)


def quenched_steep_mass(env: Environment, strip: StripSpec) -> float:
    """Exact ``Q'(S~)`` for the strip-modified version of ``env``."""
    mod = modify_strip(env, strip)
    fwd = log_partition_field(mod)
    bwd = log_partition_field(mod, direction="backward")
    a, b, L = strip.a, strip.b, strip.n0
    iu = np.arange(max(0, a - mod.n), min(a, mod.m) + 1)
    iv = np.arange(max(0, b - mod.n), min(b, mod.m) + 1)
    di = iv[None, :] - iu[:, None]
    valid = (di >= 0) & (di <= L)
    steep = valid & (2 * np.abs(L - 2 * di) > L)
    if not steep.any():
        return 0.0
    logmass = (fwd.logz[iu, a - iu][:, None] + bwd.logz[iv, b - iv][None, :]
               + log_binomial(L, np.where(valid, di, 0)) - fwd.logz[mod.m, mod.n])
    return math.exp(min(0.0, logsumexp(logmass[steep])))


def brute_force_steep_mass(env: Environment, strip: StripSpec) -> float:
    """``Q'(S~)`` by enumerating every path of the strip-modified environment."""
    mod = modify_strip(env, strip)
    pair = PointPair((0, 0), (mod.m, mod.n))
    logs = enumerate_path_log_weights(mod, pair)
    ic = np.array([p[:, 0] for p in iter_paths(pair.u, pair.v)])
    steep = steep_mask(ic, strip)
    if not steep.any():
        return 0.0
    return float(np.exp(logsumexp(logs[steep]) - logsumexp(logs)))


def _steep_replica(index, cfg: FluctuationConfig, n: int, strips, label: str):
    env, rej, seeds = conditioned_environment(cfg.family, n ** (-cfg.alpha), n, cfg.s, cfg.M,
                                              cfg.seed, label, index)
    if cfg.method == "exact":
        return np.array([quenched_steep_mass(env, st) for st in strips]), None, rej, seeds
    hits = []
    rng = make_rng(*derive_seed(seeds[0], "paths", seeds[1]))
    for st in strips:
        mod = modify_strip(env, st)
        ic = sample_i_coords(log_partition_field(mod), (n, n), rng, cfg.samples)
        hits.append(int(steep_mask(ic, st).sum()))
    hits = np.array(hits)
    return hits / cfg.samples, hits, rej, seeds


def _collect(results, replicas, samples, method):
    probs = np.array([res[0] for res in results])
    rejections = sum(res[2] for res in results)
    _check_rejections(rejections, replicas)
    if method == "exact":
        est = probs.mean(axis=0)
        se = probs.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.zeros_like(est)
        return est, se, np.zeros(len(est), bool), None, None, probs.max(axis=0), rejections
    events = np.array([res[1] for res in results]).sum(axis=0)
    N = replicas * samples
    upper = events == 0
    est = np.where(upper, zero_hit_upper(N), events / N)
    return est, binomial_stderr(events, N), upper, events, np.full(len(est), N), probs.max(axis=0), rejections


def steep_mass(cfg: FluctuationConfig) -> DecayFitReport:
    """Mass of steep paths under the strip-modified measure.

    Sweeps ``n0_grid`` at fixed ``n`` (strips centered at time n), or ``n_grid``
    with ``n0 = n^gamma``, or evaluates the single ``strip``.  The decay fit is
    against ``n0^{1 - s alpha}``.
    """
    exponent = 1.0 - cfg.s * cfg.alpha
    if cfg.n_grid:
        est, se, up, ev, tr, qmax, seeds = [], [], [], [], [], [], []
        rejections = 0
        n0s = []
        for n in cfg.n_grid:
            n0 = max(2, int(round(n ** cfg.gamma)))
            st = centered_strip(n, n0)
            _check_strip_ranges(n, st, cfg.gamma)
            job = partial(_steep_replica, cfg=cfg, n=n, strips=[st], label=f"steep-n{n}")
            res = replica_map(job, range(cfg.replicas), cfg.workers)
            e, s_, u, evs, trs, q, rj = _collect(res, cfg.replicas, cfg.samples, cfg.method)
            est.append(e[0]); se.append(s_[0]); up.append(u[0]); qmax.append(q[0])
            ev.append(None if evs is None else evs[0]); tr.append(None if trs is None else trs[0])
            rejections += rj
            n0s.append(n0)
            seeds.extend(list(r_[3]) for r_ in res)
        x = np.array(cfg.n_grid, dtype=float)
        report = DecayFitReport(
            x=x, regressor=np.array(n0s, dtype=float) ** exponent, estimate=np.array(est),
            stderr=np.array(se), upper_bound=np.array(up), quenched_max=np.array(qmax),
            events=None if cfg.method == "exact" else np.array(ev),
            trials=None if cfg.method == "exact" else np.array(tr),
            rejections=rejections, environments=cfg.replicas * len(cfg.n_grid), x_name="n",
            config=cfg.echo(), seeds=seeds,
        )
        return _fit_decay(report)

    if cfg.n0_grid:
        strips = [centered_strip(cfg.n, n0) for n0 in cfg.n0_grid]
    elif cfg.strip is not None:
        strips = [cfg.strip]
    else:
        raise ValueError("steep_mass needs n0_grid, n_grid or strip")
    for st in strips:
        st.check_within(2 * cfg.n)
    job = partial(_steep_replica, cfg=cfg, n=cfg.n, strips=strips, label="steep")
    res = replica_map(job, range(cfg.replicas), cfg.workers)
    est, se, up, ev, tr, qmax, rejections = _collect(res, cfg.replicas, cfg.samples, cfg.method)
    n0 = np.array([st.n0 for st in strips], dtype=float)
    report = DecayFitReport(
        x=n0, regressor=n0**exponent, estimate=est, stderr=se, upper_bound=up, quenched_max=qmax,
        events=ev, trials=tr, rejections=rejections, environments=cfg.replicas, x_name="n0",
        config=cfg.echo(), seeds=[list(r_[3]) for r_ in res],
    )
    return _fit_decay(report)


def _check_strip_ranges(n: int, strip: StripSpec, gamma: float) -> None:
    floor = n**gamma
    if min(strip.n0, strip.a, 2 * n - strip.b) < floor - 1:
        raise ValueError(f"strip {strip} violates n0, a, 2n-b >= n^gamma = {floor:.2f}")


# --------------------------------------------------------------------------
# path counting
# --------------------------------------------------------------------------


@dataclass
class PathCountReport:
    n: int
    k: np.ndarray
    log_a: np.ndarray
    log_formula: np.ndarray
    deviation: np.ndarray
    small_k: np.ndarray  # |k| <= sqrt(n)

    @property
    def max_abs_deviation(self) -> float:
        return float(np.max(np.abs(self.deviation)))


def lemma_pnc_check(n: int, k_grid) -> PathCountReport:
    """Compare ``log C(n, n/2 + k)`` with ``(n + 1/2) log 2 - log(n pi)/2 - 2k^2/n``."""
    if n % 2:
        raise ValueError("n must be even")
    k = np.asarray(k_grid, dtype=int)
    if np.any(np.abs(k) > n // 2):
        raise ValueError("|k| must not exceed n/2")
    log_a = log_binomial(n, n // 2 + k)
    formula = (n + 0.5) * math.log(2) - 0.5 * math.log(n * math.pi) - 2.0 * k**2 / n
    return PathCountReport(n, k, log_a, formula, log_a - formula, np.abs(k) <= math.sqrt(n))
