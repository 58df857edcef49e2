import json
import os

import pytest

from polymer_lab.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, WORKERS_ENV, main
from polymer_lab.tracy_widom import file_checksum


def write_config(tmp_path, doc, name="c.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run_kind(tmp_path, kind, params, out="out", **extra):
    cfg = write_config(tmp_path, {"kind": kind, "params": params, **extra}, f"{out}.json")
    return main([kind, "--config", cfg, "--out", str(tmp_path / out)])


SMALL_FLUCT = {"n": 40, "t_grid": [0.1, 0.2, 0.3]}


def test_success_writes_outputs(tmp_path):
    assert run_kind(tmp_path, "global-fluct", SMALL_FLUCT, replicas=4, seed=9) == EXIT_OK
    out = tmp_path / "out"
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 9 and man["replicas"] == 4 and len(man["replica_seeds"]) == 4
    assert man["resolved_params"]["alpha"] == 0.2
    for name in ("results.csv", "summary.json"):
        assert man["checksums"][name] == file_checksum(out / name)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["kind"] == "global-fluct" and "wall_clock_seconds" not in summary


@pytest.mark.parametrize("kind,params", [
    ("global-fluct", SMALL_FLUCT),
    ("partition-check", {"environments": 20, "max_size": 8}),
    ("transfer", {"n": 30}),
])
def test_results_independent_of_worker_count(tmp_path, kind, params):
    reps = 100 if kind == "transfer" else 6
    a = run_kind(tmp_path, kind, params, out="w1", replicas=reps, workers=1)
    b = run_kind(tmp_path, kind, params, out="w2", replicas=reps, workers=2)
    assert a == b == EXIT_OK
    for name in ("results.csv", "summary.json"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()


def test_workers_environment_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "2")
    cfg = write_config(tmp_path, {"kind": "lemma-pnc", "params": {"n": 20, "k_max": 3}})
    assert main(["lemma-pnc", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"]["workers"] == 2
    monkeypatch.setenv(WORKERS_ENV, "many")
    assert main(["lemma-pnc", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_warning_does_not_block(tmp_path, capsys):
    assert run_kind(tmp_path, "global-fluct", {**SMALL_FLUCT, "alpha": 0.3}, replicas=2) == EXIT_OK
    assert "outside" in capsys.readouterr().err


def test_config_errors(tmp_path):
    assert run_kind(tmp_path, "moment-gap", {"theta": 2.5, "K": 3}) == EXIT_CONFIG
    assert run_kind(tmp_path, "global-fluct", SMALL_FLUCT, replicas=-1) == EXIT_CONFIG
    assert main(["no-such-kind"]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert main(["global-fluct", "--config", str(bad)]) == EXIT_CONFIG
    other = write_config(tmp_path, {"kind": "transfer"})
    assert main(["global-fluct", "--config", other]) == EXIT_CONFIG
    assert main(["global-fluct", "--seed", "-3"]) == EXIT_CONFIG


def test_io_errors(tmp_path):
    assert main(["global-fluct", "--config", str(tmp_path / "missing.json")]) == EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = write_config(tmp_path, {"kind": "lemma-pnc", "params": {"n": 10, "k_max": 2}})
    assert main(["lemma-pnc", "--config", cfg, "--out", str(blocker / "sub")]) == EXIT_IO
    assert main(["tw-convergence", "--tw-table", str(tmp_path / "none.csv")]) == EXIT_IO


def test_numerical_failure(tmp_path):
    # a tiny M makes almost every environment miss the high-probability event
    assert run_kind(tmp_path, "global-fluct", {"n": 30, "M": 0.05}, replicas=3) == EXIT_NUMERIC


def test_table_checksum_recorded_downstream(tmp_path):
    params = {"s_min": -8.0, "s_max": 4.0, "step": 0.25, "order": 24}
    assert run_kind(tmp_path, "tw-table", params, out="tab") == EXIT_OK
    table = tmp_path / "tab" / "tw_table.csv"
    cfg = write_config(tmp_path, {"kind": "tw-convergence", "params": {"n": 30}, "replicas": 100})
    code = main(["tw-convergence", "--config", cfg, "--out", str(tmp_path / "conv"), "--tw-table", str(table)])
    assert code == EXIT_OK
    man = json.loads((tmp_path / "conv" / "manifest.json").read_text())
    assert man["inputs"]["tw_table"] == file_checksum(table)
    summary = json.loads((tmp_path / "conv" / "summary.json").read_text())
    assert summary["table_sha256"] == file_checksum(table)
    assert not os.path.exists(tmp_path / "conv" / "tw_table.csv")


@pytest.mark.parametrize("kind,params", [
    ("sampler-check", {"environments": 3, "samples": 2000}),
    ("moment-gap", {}),
    ("constants-table", {}),
    ("lindeberg-tiny", {"n": 2, "budget": 50}),
    ("lindeberg-sweep", {"budget": 4, "vertices_per_block": 1}),
    ("local-fluct", {"n": 200, "r": 20, "t_grid": [0.5, 1.0]}),
    ("steep-mass", {"n": 100, "n0_grid": [8, 16]}),
])
def test_other_kinds_run(tmp_path, kind, params):
    assert run_kind(tmp_path, kind, params, replicas=None if kind in (
        "sampler-check", "moment-gap", "constants-table", "lindeberg-tiny") else 3) == EXIT_OK
    assert (tmp_path / "out" / "results.csv").exists()
