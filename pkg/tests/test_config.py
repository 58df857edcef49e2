import json

import pytest
from hypothesis import given, strategies as st

from polymer_lab.config import KINDS, ConfigError, ExperimentConfig, errors, validate


def levels(config):
    return [(v.level, v.message) for v in validate(config)]


@given(kind=st.sampled_from(KINDS), seed=st.integers(0, 2**64 - 1),
       replicas=st.one_of(st.none(), st.integers(1, 10_000)), workers=st.integers(1, 16))
def test_round_trip(kind, seed, replicas, workers):
    c = ExperimentConfig(kind, {}, seed, replicas, workers, "out/x")
    assert ExperimentConfig.from_json(c.to_json()) == c


@pytest.mark.parametrize("kind", KINDS)
def test_defaults_are_valid(kind):
    assert errors(validate(ExperimentConfig(kind))) == []


def test_alpha_outside_range_warns_only():
    v = validate(ExperimentConfig("global-fluct", {"alpha": 0.3}))
    assert [x.level for x in v] == ["warning"]
    assert "alpha" in v[0].message


@pytest.mark.parametrize("theta", [2.5, 3.0])
def test_log_gamma_theta_must_exceed_k(theta):
    v = errors(validate(ExperimentConfig("moment-gap", {"theta": theta, "K": 3})))
    assert v and "theta" in v[0].message
    assert not errors(validate(ExperimentConfig("moment-gap", {"theta": 3.5, "K": 3})))


def test_hard_errors():
    bad = [
        ExperimentConfig("global-fluct", replicas=-4),
        ExperimentConfig("global-fluct", {"alpha": 1.5}),
        ExperimentConfig("global-fluct", {"bogus": 1}),
        ExperimentConfig("global-fluct", {"n": "ten"}),
        ExperimentConfig("local-fluct", {"r": None}),
        ExperimentConfig("lemma-pnc", {"n": 11}),
        ExperimentConfig("lemma-pnc", {"n": 10, "k_max": 6}),
        ExperimentConfig("tw-table", {"s_min": -12.0}),
        ExperimentConfig("lindeberg-tiny", {"n": 5}),
        ExperimentConfig("lindeberg-sweep", {"delta": 1.0}),
        ExperimentConfig("transfer", {"family_a": {"kind": "nope"}}),
        ExperimentConfig("moment-gap", {"xi": {"kind": "two_point", "a": 1.0}}),
        ExperimentConfig("no-such-kind"),
    ]
    for c in bad:
        assert errors(validate(c)), c


def test_replicas_ignored_warning():
    v = validate(ExperimentConfig("lemma-pnc", replicas=10))
    assert [x.level for x in v] == ["warning"]


def test_schema_rejects_malformed_documents():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("[1, 2]")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "transfer", "extra": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "transfer", "seed": -1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "bogus"})


def test_resolved_params_merge_defaults():
    c = ExperimentConfig.from_dict(json.loads('{"kind": "global-fluct", "params": {"n": 77}}'))
    p = c.resolved_params()
    assert p["n"] == 77 and p["alpha"] == 0.2
    assert c.resolved_replicas() == 200
