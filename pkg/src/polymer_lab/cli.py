"""``polymer-lab <experiment-kind> --config <path> [...]``

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .config import KINDS, ConfigError, ExperimentConfig, errors, validate
from .experiments import NUMERICAL_ERRORS, RUNNERS, RunContext
from .tracy_widom import file_checksum

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

WORKERS_ENV = "POLYMER_LAB_WORKERS"


def _plain(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow(_plain(r))


def run(config: ExperimentConfig, tw_table: str | None = None) -> dict:
    """Execute ``config`` and write results; returns the manifest."""
    problems = validate(config)
    bad = errors(problems)
    if bad:
        raise ConfigError("; ".join(v.message for v in bad))
    out_dir = config.out or os.path.join("results", config.kind)
    os.makedirs(out_dir, exist_ok=True)
    params = config.resolved_params()
    ctx = RunContext(config.resolved_replicas(), config.seed, config.workers, out_dir, tw_table)
    start = time.time()
    result = RUNNERS[config.kind](params, ctx)
    elapsed = time.time() - start

    files = {"results.csv": os.path.join(out_dir, "results.csv"),
             "summary.json": os.path.join(out_dir, "summary.json")}
    _write_rows(files["results.csv"], result.rows)
    _write_json(files["summary.json"], {"kind": config.kind, **result.summary})
    for name, writer in result.extra.items():
        files[name] = os.path.join(out_dir, name)
        writer(files[name])
    if config.kind in ("tw-table",) or (config.kind in ("tw-convergence", "transfer") and tw_table is None):
        files["tw_table.csv"] = os.path.join(out_dir, "tw_table.csv")

    manifest = {
        "config": config.to_dict(),
        "resolved_params": params,
        "replicas": ctx.replicas,
        "version": __version__,
        "seed": config.seed,
        "replica_seeds": result.seeds,
        "inputs": result.inputs,
        "warnings": [v.message for v in problems if v.level == "warning"],
        "wall_clock_seconds": elapsed,
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(start)),
        "checksums": {name: file_checksum(path) for name, path in sorted(files.items())},
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polymer-lab", description="Directed polymer numerics lab.")
    p.add_argument("kind", choices=KINDS, help="experiment kind")
    p.add_argument("--config", help="JSON config file (defaults used when omitted)")
    p.add_argument("--out", help="output directory (default results/<kind>)")
    p.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    p.add_argument("--workers", type=int, help=f"worker processes (fallback: ${WORKERS_ENV})")
    p.add_argument("--tw-table", help="Tracy-Widom table CSV from a tw-table run")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgError as exc:
        print(f"polymer-lab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.config:
            with open(args.config) as fh:
                raw = json.load(fh)
            if not isinstance(raw, dict):
                raise ConfigError("config must be a JSON object")
            if raw.setdefault("kind", args.kind) != args.kind:
                raise ConfigError(f"config is for {raw['kind']!r}, not {args.kind!r}")
            config = ExperimentConfig.from_dict(raw)
        else:
            config = ExperimentConfig(args.kind)
        if args.seed is not None:
            config.seed = args.seed
        if args.out:
            config.out = args.out
        workers = args.workers
        if workers is None and os.environ.get(WORKERS_ENV):
            try:
                workers = int(os.environ[WORKERS_ENV])
            except ValueError:
                raise ConfigError(f"{WORKERS_ENV} must be an integer") from None
        if workers is not None:
            config.workers = workers
        if args.tw_table and not os.path.isfile(args.tw_table):
            raise FileNotFoundError(args.tw_table)
        for v in validate(config):
            if v.level == "warning":
                print(f"polymer-lab: {v}", file=sys.stderr)
        manifest = run(config, args.tw_table)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"polymer-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"polymer-lab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"polymer-lab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # parameter combinations rejected by the numerical modules
        print(f"polymer-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({"out": config.out or os.path.join("results", config.kind),
                      "seconds": round(manifest["wall_clock_seconds"], 3)}))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
