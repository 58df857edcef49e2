"""Experiment configuration: JSON in, validated dataclass out."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Any

import jsonschema

KINDS = (
    "partition-check", "sampler-check", "lemma-pnc", "global-fluct", "local-fluct",
    "steep-mass", "moment-gap", "constants-table", "tw-table", "tw-convergence",
    "lindeberg-tiny", "lindeberg-sweep", "transfer",
)

_family = {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}}
_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_num_list = {"type": "array", "items": _num}
_int_list = {"type": "array", "items": {"type": "integer"}}

_fluct = {
    "n": _pos_int, "alpha": _num, "s": _num, "M": _num, "r": {"type": ["integer", "null"]},
    "t_grid": {"type": ["array", "null"], "items": _num}, "gamma": _num,
    "strip": {"type": ["array", "null"], "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
    "n0_grid": {"type": ["array", "null"], "items": {"type": "integer"}},
    "n_grid": {"type": ["array", "null"], "items": {"type": "integer"}},
    "family": _family, "method": {"enum": ["exact", "sample"]}, "samples": _pos_int,
    "enforce_local": {"type": "boolean"},
}

PARAM_PROPERTIES: dict[str, dict] = {
    "partition-check": {"environments": _pos_int, "max_size": _pos_int, "family": _family, "beta": _num},
    "sampler-check": {"environments": _pos_int, "samples": _pos_int, "size": _pos_int,
                      "family": _family, "beta": _num},
    "lemma-pnc": {"n": _pos_int, "k_max": {"type": "integer", "minimum": 0}},
    "global-fluct": _fluct,
    "local-fluct": _fluct,
    "steep-mass": _fluct,
    "moment-gap": {"xi": _family, "betas": _num_list, "K": _pos_int,
                   "theta": {"type": ["number", "null"]}},
    "constants-table": {"n_grid": _int_list, "alpha_grid": _num_list, "xi": _family},
    "tw-table": {"s_min": _num, "s_max": _num, "step": _num, "order": _pos_int},
    "tw-convergence": {"n": _pos_int, "alpha": _num, "family": _family, "xi": _family,
                       "mode": {"enum": ["exact", "paper", "lattice"]}},
    "lindeberg-tiny": {"n": _pos_int, "beta": _num, "family_a": _family, "family_b": _family,
                       "f": {"type": "string"}, "budget": _pos_int,
                       "vertices": {"type": ["array", "null"], "items": _int_list}},
    "lindeberg-sweep": {"n": _pos_int, "alpha": _num, "delta": _num, "K": _pos_int,
                        "family_a": _family, "family_b": _family, "f": {"type": "string"},
                        "budget": _pos_int, "vertices_per_block": _pos_int, "full": {"type": "boolean"}},
    "transfer": {"n": _pos_int, "alpha": _num, "K": _pos_int, "family_a": _family,
                 "family_b": _family, "xi": _family,
                 "mode": {"enum": ["exact", "paper", "transfer", "lattice"]},
                 "shared_seeds": {"type": "boolean"}},
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "partition-check": {"environments": 200, "max_size": 12, "family": {"kind": "log_gamma"}, "beta": 0.5},
    "sampler-check": {"environments": 100, "samples": 100000, "size": 3,
                      "family": {"kind": "log_gamma"}, "beta": 0.5},
    "lemma-pnc": {"n": 1000, "k_max": 31},
    "global-fluct": {"n": 500, "alpha": 0.2, "s": 0.5, "M": 5.0, "family": {"kind": "log_gamma"},
                     "method": "exact", "samples": 1000},
    "local-fluct": {"n": 500, "alpha": 0.2, "s": 0.5, "M": 5.0, "r": 50,
                    "family": {"kind": "log_gamma"}, "method": "exact", "samples": 1000},
    "steep-mass": {"n": 500, "alpha": 0.2, "s": 0.5, "M": 5.0, "n0_grid": [8, 16, 32, 64],
                   "family": {"kind": "log_gamma"}, "method": "exact", "samples": 1000},
    "moment-gap": {"xi": {"kind": "gaussian"}, "betas": [0.2, 0.1, 0.05, 0.025], "K": 3, "theta": None},
    "constants-table": {"n_grid": [100, 1000, 10000], "alpha_grid": [0.15, 0.2, 0.24],
                        "xi": {"kind": "gaussian"}},
    "tw-table": {"s_min": -10.0, "s_max": 6.0, "step": 0.02, "order": 64},
    "tw-convergence": {"n": 1000, "alpha": 0.2, "family": {"kind": "log_gamma", "match": {"kind": "gaussian"}},
                       "xi": {"kind": "gaussian"}, "mode": "exact"},
    "lindeberg-tiny": {"n": 3, "beta": 0.5, "family_a": {"kind": "two_point", "v1": 0.5, "v2": 1.5, "p": 0.5},
                       "family_b": {"kind": "two_point", "v1": 0.25, "v2": 1.75, "p": 0.5},
                       "f": "tanh", "budget": 2000, "vertices": None},
    "lindeberg-sweep": {"n": 64, "alpha": 0.2, "delta": 0.5, "K": 3,
                        "family_a": {"kind": "log_gamma", "match": {"kind": "gaussian"}},
                        "family_b": {"kind": "exp_tilt", "xi": {"kind": "gaussian"}},
                        "f": "tanh", "budget": 100, "vertices_per_block": 3, "full": False},
    "transfer": {"n": 1000, "alpha": 0.2, "K": 3,
                 "family_a": {"kind": "log_gamma", "match": {"kind": "gaussian"}},
                 "family_b": {"kind": "exp_tilt", "xi": {"kind": "gaussian"}},
                 "xi": {"kind": "gaussian"}, "mode": "exact", "shared_seeds": False},
}

DEFAULT_REPLICAS = {"global-fluct": 200, "local-fluct": 200, "steep-mass": 100,
                    "tw-convergence": 2000, "transfer": 2000}

SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "replicas": {"type": ["integer", "null"]},
        "workers": {"type": "integer", "minimum": 1},
        "out": {"type": ["string", "null"]},
        "params": {"type": "object"},
    },
}

PAPER_ALPHA_RANGE = (2 / 17, 1 / 4)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    level: str  # "error" or "warning"
    message: str

    def __str__(self):
        return f"{self.level}: {self.message}"


@dataclass
class ExperimentConfig:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    replicas: int | None = None
    workers: int = 1
    out: str | None = None

    def resolved_params(self) -> dict:
        p = copy.deepcopy(DEFAULTS.get(self.kind, {}))
        p.update(copy.deepcopy(self.params))
        return p

    def resolved_replicas(self) -> int | None:
        return self.replicas if self.replicas is not None else DEFAULT_REPLICAS.get(self.kind)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": copy.deepcopy(self.params), "seed": self.seed,
                "replicas": self.replicas, "workers": self.workers, "out": self.out}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(d, SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(exc.message) from None
        return cls(kind=d["kind"], params=copy.deepcopy(d.get("params", {})), seed=d.get("seed", 0),
                   replicas=d.get("replicas"), workers=d.get("workers", 1), out=d.get("out"))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)


def validate(config: ExperimentConfig) -> list[Violation]:
    """All problems with ``config``; runnable iff no entry has level ``error``."""
    out: list[Violation] = []
    err = lambda m: out.append(Violation("error", m))  # noqa: E731
    warn = lambda m: out.append(Violation("warning", m))  # noqa: E731
    if config.kind not in KINDS:
        err(f"unknown experiment kind {config.kind!r}")
        return out
    if not 0 <= config.seed < 2**64:
        err("seed must be an unsigned 64-bit integer")
    if config.workers < 1:
        err("workers must be positive")
    if config.replicas is not None and config.replicas < 1:
        err("replica count must be positive")

    props = PARAM_PROPERTIES[config.kind]
    unknown = sorted(set(config.params) - set(props))
    if unknown:
        err(f"unknown parameters for {config.kind}: {', '.join(unknown)}")
    p = config.resolved_params()
    schema = {"type": "object", "properties": props}
    for e in jsonschema.Draft7Validator(schema).iter_errors(p):
        err(f"{'.'.join(str(x) for x in e.path) or 'params'}: {e.message}")
    if any(v.level == "error" for v in out):
        return out

    for name in ("family", "family_a", "family_b"):
        if name in p:
            _check_family(p[name], name, err)
    for name in ("xi",):
        if name in p:
            _check_xi(p[name], name, err)

    if "alpha" in p:
        a = p["alpha"]
        if not 0 < a < 1:
            err(f"alpha={a} must lie in (0, 1)")
        elif not PAPER_ALPHA_RANGE[0] < a < PAPER_ALPHA_RANGE[1]:
            warn(f"alpha={a} outside (2/17, 1/4)")
    if "beta" in p and not 0 < p["beta"] < 1:
        err(f"beta={p['beta']} must lie in (0, 1)")

    kind = config.kind
    if kind in ("global-fluct", "local-fluct", "steep-mass"):
        if not 0 < p["s"] <= 1:
            err("s must lie in (0, 1]")
        if p["M"] <= 0:
            err("M must be positive")
        if kind == "local-fluct" and p.get("r") is None:
            err("local-fluct needs r")
        if kind == "steep-mass" and not (p.get("n0_grid") or p.get("n_grid") or p.get("strip")):
            err("steep-mass needs n0_grid, n_grid or strip")
    if kind == "moment-gap":
        if p["theta"] is not None and p["K"] >= 3 and p["theta"] <= p["K"]:
            err(f"theta={p['theta']} <= K={p['K']}: log-Gamma moment of order K is infinite")
        if any(not 0 < b < 1 for b in p["betas"]):
            err("betas must lie in (0, 1)")
    if kind == "tw-table":
        if not -10 <= p["s_min"] < p["s_max"] <= 6:
            err("table range must satisfy -10 <= s_min < s_max <= 6")
        if p["step"] <= 0:
            err("step must be positive")
        if p["order"] < 20:
            err("order must be at least 20")
    if kind == "lemma-pnc":
        if p["n"] % 2:
            err("n must be even")
        if p["k_max"] > p["n"] // 2:
            err("k_max must not exceed n/2")
    if kind == "lindeberg-tiny" and (p["n"] + 1) ** 2 > 23:
        err("lindeberg-tiny enumerates all weight outcomes; n must be at most 3")
    if kind == "lindeberg-sweep" and not 0 < p["delta"] < 1:
        err("delta must lie in (0, 1)")
    if kind in ("partition-check", "sampler-check", "lemma-pnc", "moment-gap",
                "constants-table", "tw-table", "lindeberg-tiny") and config.replicas is not None:
        warn(f"replicas is ignored by {kind}")
    return out


def errors(violations) -> list[Violation]:
    return [v for v in violations if v.level == "error"]


def _check_family(d, name, err):
    from .environment import family_from_dict

    try:
        family_from_dict(d)
    except (ValueError, TypeError, KeyError) as exc:
        err(f"{name}: {exc}")


def _check_xi(d, name, err):
    from .environment import xi_from_dict

    try:
        xi_from_dict(d)
    except (ValueError, TypeError, KeyError) as exc:
        err(f"{name}: {exc}")
