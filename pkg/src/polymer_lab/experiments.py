"""Runners behind each CLI experiment kind.

Every runner returns an ``ExperimentResult`` whose rows and summary depend only
on the parameters and the master seed.  Timing lives in the manifest.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .environment import (ExpTilt, GaussianXi, family_from_dict, sample_environment, xi_from_dict)
from .fluctuations import (FluctuationConfig, RejectionError, global_fluct_probability,
                           lemma_pnc_check, local_fluct_probability, steep_mass)
from .lindeberg import (distribution_transfer_experiment, free_energy_batch, lambda_exponent,
                        scan_alpha_threshold, strip_sweep, vw_decomposition, zeta_v, zeta_v_exact)
from .parallel import replica_map
from .partition import (PointPair, brute_force_log_partition, enumerate_path_log_weights, free_energy,
                        iter_paths, log_partition_field)
from .rng import derive_seed, make_rng
from .sampler import path_codes, sample_i_coords
from .scaling import ModelConstants, moment_gap, rescale_free_energy, theta_of_beta
from .stats import chi_square_pvalue, linear_fit, total_variation
from .tracy_widom import (ConvergenceError, DistributionTable, build_table, file_checksum,
                          ks_critical, ks_distance)


class NumericalError(RuntimeError):
    pass


NUMERICAL_ERRORS = (NumericalError, ConvergenceError, RejectionError, FloatingPointError,
                    ZeroDivisionError, OverflowError)


@dataclass
class ExperimentResult:
    rows: list[dict]
    summary: dict
    seeds: list = field(default_factory=list)
    # extra output files: name -> writer(path)
    extra: dict[str, Callable] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)


@dataclass
class RunContext:
    replicas: int | None
    seed: int
    workers: int
    out_dir: str
    tw_table: str | None = None


def _finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite {what}")
    return x


# --------------------------------------------------------------------------
# oracle checks
# --------------------------------------------------------------------------


def _partition_replica(index, p, seed):
    rng = make_rng(*derive_seed(seed, "partition-check-size", index))
    total = int(rng.integers(0, p["max_size"] + 1))
    m = int(rng.integers(0, total + 1))
    s = derive_seed(seed, "partition-check", index)
    env = sample_environment(family_from_dict(p["family"]), p["beta"], m, total - m, *s)
    dp = free_energy(env)
    bf = brute_force_log_partition(env)
    return {"index": index, "m": m, "n": total - m, "seed": s[0], "stream": s[1], "dp": dp,
            "enumeration": bf, "rel_err": abs(dp - bf) / max(abs(bf), 1e-300)}


def run_partition_check(p, ctx: RunContext) -> ExperimentResult:
    job = partial(_partition_replica, p=p, seed=ctx.seed)
    rows = replica_map(job, range(p["environments"]), ctx.workers)
    worst = max(r["rel_err"] for r in rows)
    return ExperimentResult(rows, {"environments": len(rows), "max_rel_err": worst,
                                   "tolerance": 1e-10, "passed": worst <= 1e-10},
                            [[r["seed"], r["stream"]] for r in rows])


def _sampler_replica(index, p, seed):
    size = p["size"]
    s = derive_seed(seed, "sampler-check", index)
    env = sample_environment(family_from_dict(p["family"]), p["beta"], size, size, *s)
    pair = PointPair((0, 0), (size, size))
    logs = enumerate_path_log_weights(env, pair)
    q = np.exp(logs - np.logaddexp.reduce(logs))
    codes = path_codes(np.array([v[:, 0] for v in iter_paths(pair.u, pair.v)]))
    lookup = {int(c): k for k, c in enumerate(codes)}
    rng = make_rng(*derive_seed(s[0], "paths", s[1]))
    ic = sample_i_coords(log_partition_field(env), (size, size), rng, p["samples"])
    idx = np.array([lookup[int(c)] for c in path_codes(ic)])
    counts = np.bincount(idx, minlength=len(q))
    pval = chi_square_pvalue(counts, q)
    return {"index": index, "seed": s[0], "stream": s[1], "pvalue": pval,
            "tv": total_variation(counts / p["samples"], q)}


def run_sampler_check(p, ctx: RunContext) -> ExperimentResult:
    job = partial(_sampler_replica, p=p, seed=ctx.seed)
    rows = replica_map(job, range(p["environments"]), ctx.workers, chunksize=4)
    passing = sum(r["pvalue"] > 1e-3 for r in rows)
    need = math.ceil(0.95 * len(rows))
    return ExperimentResult(rows, {"environments": len(rows), "passing": passing, "required": need,
                                   "passed": passing >= need},
                            [[r["seed"], r["stream"]] for r in rows])


def run_lemma_pnc(p, ctx: RunContext) -> ExperimentResult:
    rep = lemma_pnc_check(p["n"], range(-p["k_max"], p["k_max"] + 1))
    rows = [{"k": int(k), "log_a": float(a), "log_formula": float(f), "deviation": float(d)}
            for k, a, f, d in zip(rep.k, rep.log_a, rep.log_formula, rep.deviation)]
    dev = rep.max_abs_deviation
    return ExperimentResult(rows, {"n": p["n"], "max_abs_deviation": dev, "passed": dev < 0.01})


# --------------------------------------------------------------------------
# fluctuations
# --------------------------------------------------------------------------


def _fluct_config(p, ctx: RunContext) -> FluctuationConfig:
    return FluctuationConfig(replicas=ctx.replicas, seed=ctx.seed, workers=ctx.workers, **p)


def _decay_result(report) -> ExperimentResult:
    summary = report.summary()
    summary["monotone_violations"] = report.monotone_violations()
    return ExperimentResult(list(report.rows()), summary, report.seeds)


def run_global_fluct(p, ctx):
    return _decay_result(global_fluct_probability(_fluct_config(p, ctx)))


def run_local_fluct(p, ctx):
    return _decay_result(local_fluct_probability(_fluct_config(p, ctx)))


def run_steep_mass(p, ctx):
    return _decay_result(steep_mass(_fluct_config(p, ctx)))


# --------------------------------------------------------------------------
# constants
# --------------------------------------------------------------------------


def run_moment_gap(p, ctx) -> ExperimentResult:
    xi = xi_from_dict(p["xi"])
    betas = np.asarray(p["betas"], dtype=float)
    rows, slopes = [], {}
    for k in range(1, p["K"] + 1):
        gaps = []
        for b in betas:
            g = moment_gap(xi, float(b), k, theta=p["theta"])
            gaps.append(g)
            theta = p["theta"] if p["theta"] is not None else theta_of_beta(xi, float(b)).theta
            rows.append({"k": k, "beta": float(b), "theta": theta, "gap": g})
        gaps = np.array(gaps)
        if k >= 3 and np.all(gaps > 0):
            slopes[str(k)] = linear_fit(np.log(betas), np.log(gaps)).slope
    low = max(r["gap"] for r in rows if r["k"] <= 2)
    return ExperimentResult(rows, {"xi": p["xi"], "slopes": slopes, "max_gap_k12": low,
                                   "theta_override": p["theta"]})


def run_constants_table(p, ctx) -> ExperimentResult:
    xi = xi_from_dict(p["xi"])
    rows = []
    for n in p["n_grid"]:
        for a in p["alpha_grid"]:
            c = ModelConstants.from_xi(n, xi, alpha=a)
            rows.append({"n": n, "alpha": a, "beta": c.beta, "theta": c.theta, "sigma2": c.sigma2,
                         "a_n": c.a_n, "mean_one_centering": c.mean_one_centering,
                         "paper_scale": c.paper_scale, "exact_scale": c.exact_scale,
                         "transfer_scale": c.transfer_scale})
    return ExperimentResult(rows, {"xi": p["xi"], "entries": len(rows)})


# --------------------------------------------------------------------------
# Tracy-Widom
# --------------------------------------------------------------------------


def run_tw_table(p, ctx) -> ExperimentResult:
    table = build_table(p["s_min"], p["s_max"], p["step"], p["order"], ctx.workers)
    path = os.path.join(ctx.out_dir, "tw_table.csv")
    checksum = table.to_csv(path)
    rows = [{"s": float(s), "F2": float(f)} for s, f in zip(table.s, table.F)]
    return ExperimentResult(rows, {"points": len(rows), "order": p["order"], "table": "tw_table.csv",
                                   "table_sha256": checksum})


def _load_table(ctx: RunContext) -> tuple[DistributionTable, str, str]:
    if ctx.tw_table:
        return DistributionTable.from_csv(ctx.tw_table), ctx.tw_table, file_checksum(ctx.tw_table)
    path = os.path.join(ctx.out_dir, "tw_table.csv")
    checksum = build_table().to_csv(path)
    return DistributionTable.from_csv(path), path, checksum


def run_tw_convergence(p, ctx) -> ExperimentResult:
    table, tpath, checksum = _load_table(ctx)
    c = ModelConstants.from_xi(p["n"], xi_from_dict(p["xi"]), alpha=p["alpha"])
    family = family_from_dict(p["family"])
    lz, seeds = free_energy_batch(family, c.beta, c.n, ctx.replicas, ctx.seed, "tw-convergence", ctx.workers)
    x = _finite(rescale_free_energy(lz, c, mode=p["mode"]), "free energy")
    ks = ks_distance(x, table)
    rows = [{"index": k, "seed": s[0], "stream": s[1], "log_z": float(a), "rescaled": float(b)}
            for k, (s, a, b) in enumerate(zip(seeds, lz, x))]
    lattice = rescale_free_energy(lz, c, mode="lattice")
    summary = {"ks_to_tw": ks, "ks_to_tw_lattice": ks_distance(lattice, table),
               "ks_critical_1pct": ks_critical(len(x)), "mean": float(x.mean()),
               "variance": float(x.var(ddof=1)), "theta": c.theta, "beta": c.beta,
               "table": os.path.basename(tpath), "table_sha256": checksum}
    return ExperimentResult(rows, summary, seeds, inputs={"tw_table": checksum})


# --------------------------------------------------------------------------
# replacement experiments
# --------------------------------------------------------------------------


def _decomposition_residual(n, beta, family, seed) -> float:
    env = sample_environment(family, beta, n, n, *derive_seed(seed, "decomposition", 0))
    fwd, bwd = log_partition_field(env), log_partition_field(env, direction="backward")
    logz = fwd[(n, n)]
    worst = 0.0
    for i in range(n + 1):
        for j in range(n + 1):
            lw, lv = vw_decomposition(fwd, bwd, env, (i, j))
            z = np.logaddexp(lv, env.log_weights[i, j] + lw)
            worst = max(worst, abs(math.expm1(z - logz)))
    return worst


def run_lindeberg_tiny(p, ctx) -> ExperimentResult:
    n = p["n"]
    c = ModelConstants.log_gamma(n, beta=p["beta"])
    fa, fb = family_from_dict(p["family_a"]), family_from_dict(p["family_b"])
    if p["vertices"] is None:
        verts = [(i, j) for i in range(n + 1) for j in range(n + 1) if (i, j) not in ((0, 0), (n, n))]
    else:
        verts = [tuple(v) for v in p["vertices"]]
    rows = []
    for k, v in enumerate(verts):
        exact = zeta_v_exact(fa, fb, v, p["f"], c)
        mc = zeta_v(fa, fb, v, p["f"], c, p["budget"], seed=derive_seed(ctx.seed, "zeta", k)[0],
                    workers=ctx.workers)
        z = (mc.mean - exact) / mc.stderr if mc.stderr > 0 else 0.0
        rows.append({"i": v[0], "j": v[1], "zeta_exact": exact, "zeta_mc": mc.mean,
                     "stderr": mc.stderr, "z_score": z})
    worst = max(abs(r["z_score"]) for r in rows)
    resid = _decomposition_residual(n, p["beta"], fa, ctx.seed)
    return ExperimentResult(rows, {"vertices": len(rows), "max_abs_z": worst,
                                   "decomposition_residual": resid,
                                   "passed": worst <= 3.0 and resid <= 1e-10})


def _xi_of(family_dict) -> dict:
    fam = family_from_dict(family_dict)
    return fam.xi.to_dict() if isinstance(fam, ExpTilt) else GaussianXi().to_dict()


def run_lindeberg_sweep(p, ctx) -> ExperimentResult:
    c = ModelConstants.from_xi(p["n"], xi_from_dict(_xi_of(p["family_b"])), alpha=p["alpha"])
    rep = strip_sweep(family_from_dict(p["family_a"]), family_from_dict(p["family_b"]), c,
                      p["delta"], p["K"], p["f"], p["budget"], p["vertices_per_block"], ctx.seed,
                      p["full"], ctx.workers)
    rows = [{"i": z.vertex[0], "j": z.vertex[1], "block": rep.assignment[z.vertex], "zeta": z.mean,
             "stderr": z.stderr, "samples": z.samples} for z in rep.per_vertex]
    summary = rep.summary()
    summary["alpha_threshold_scan"] = scan_alpha_threshold(p["K"])
    summary["lambda_check"] = lambda_exponent(rep.alpha, rep.K, rep.delta)
    return ExperimentResult(rows, summary, extra={"report.json": rep.to_json})


def run_transfer(p, ctx) -> ExperimentResult:
    table, tpath, checksum = _load_table(ctx)
    c = ModelConstants.from_xi(p["n"], xi_from_dict(p["xi"]), alpha=p["alpha"])
    rep = distribution_transfer_experiment(
        family_from_dict(p["family_a"]), family_from_dict(p["family_b"]), c, ctx.replicas, ctx.seed,
        p["K"], table, p["mode"], p["shared_seeds"], ctx.workers)
    _finite(rep.samples_a, "free energy")
    _finite(rep.samples_b, "free energy")
    rows = [{"index": k, "seed_a": sa[0], "stream_a": sa[1], "x_a": float(a),
             "seed_b": sb[0], "stream_b": sb[1], "x_b": float(b)}
            for k, (sa, sb, a, b) in enumerate(zip(rep.seeds_a, rep.seeds_b, rep.samples_a, rep.samples_b))]
    summary = rep.summary()
    summary.update({"ks_a_tw_lattice": ks_distance(rescale_free_energy(rep.log_z_a, c, "lattice"), table),
                    "theta": c.theta, "beta": c.beta, "table": os.path.basename(tpath),
                    "table_sha256": checksum, "ks_critical_1pct": ks_critical(ctx.replicas)})
    return ExperimentResult(rows, summary, rep.seeds_a + rep.seeds_b, inputs={"tw_table": checksum})


RUNNERS: dict[str, Callable[[dict, RunContext], ExperimentResult]] = {
    "partition-check": run_partition_check,
    "sampler-check": run_sampler_check,
    "lemma-pnc": run_lemma_pnc,
    "global-fluct": run_global_fluct,
    "local-fluct": run_local_fluct,
    "steep-mass": run_steep_mass,
    "moment-gap": run_moment_gap,
    "constants-table": run_constants_table,
    "tw-table": run_tw_table,
    "tw-convergence": run_tw_convergence,
    "lindeberg-tiny": run_lindeberg_tiny,
    "lindeberg-sweep": run_lindeberg_sweep,
    "transfer": run_transfer,
}
