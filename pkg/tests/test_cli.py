"""End-to-end tests of the command line runner.

Everything goes through cli.main() in-process so exit codes, artifact
contents, and error messages are all checked exactly as a shell user
would see them.
"""

import json
import os

import numpy as np
import pytest

from branchfield import cli
from branchfield.estimators import ConfigError


def _write(tmp_path, text):
    path = tmp_path / "exp.toml"
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------

def test_defaults_materialized():
    cfg = cli.load_config(None)
    assert cfg["laws"]["hypothesis"] == "H1"
    assert cfg["run"]["seed"] == 42
    assert cfg["truncation"]["k_max"] == 2000
    # every schema key is present
    for section, keys in cli.SCHEMA.items():
        assert set(cfg[section]) == set(keys)


def test_unknown_section_rejected(tmp_path):
    path = _write(tmp_path, "[lawz]\nhypothesis = 'H1'\n")
    with pytest.raises(ConfigError, match="unknown config section"):
        cli.load_config(path)


def test_unknown_key_rejected(tmp_path):
    path = _write(tmp_path, "[laws]\nhyposthesis = 'H1'\n")
    with pytest.raises(ConfigError, match="hyposthesis"):
        cli.load_config(path)


def test_wrong_type_rejected(tmp_path):
    path = _write(tmp_path, "[run]\ntrials = 'many'\n")
    with pytest.raises(ConfigError, match="trials"):
        cli.load_config(path)


def test_missing_config_file():
    with pytest.raises(ConfigError, match="not found"):
        cli.load_config("/nonexistent/exp.toml")


def test_partial_config_keeps_other_defaults(tmp_path):
    path = _write(tmp_path, "[run]\nseed = 7\n")
    cfg = cli.load_config(path)
    assert cfg["run"]["seed"] == 7
    assert cfg["run"]["trials"] == 20_000
    assert cfg["laws"]["dimension"] == 3


# ---------------------------------------------------------------------------
# exit code 3: precondition errors name the parameter to change
# ---------------------------------------------------------------------------

def test_h1_low_dimension_exits_3(tmp_path, capsys):
    path = _write(tmp_path, "[laws]\nhypothesis = 'H1'\ndimension = 2\n")
    code = cli.main(["survival", "--config", path,
                     "--out", str(tmp_path / "out")])
    assert code == 3
    err = capsys.readouterr().err
    assert "dimension" in err


def test_h3_pairing_violation_exits_3(tmp_path, capsys):
    path = _write(tmp_path,
                  "[laws]\nhypothesis = 'H3'\ndimension = 2\n"
                  "alpha = 1.0\nbeta = 0.4\noffspring = 'beta'\n")
    code = cli.main(["survival", "--config", path,
                     "--out", str(tmp_path / "out")])
    assert code == 3
    assert "alpha/beta" in capsys.readouterr().err


def test_llt_refuses_continuum_motion(tmp_path, capsys):
    code = cli.main(["llt", "--out", str(tmp_path / "out")])
    assert code == 3
    assert "H2" in capsys.readouterr().err


def test_bad_flag_exits_3(tmp_path, capsys):
    code = cli.main(["survival", "--bogus"])
    assert code == 3


def test_supercritical_table_rejected(tmp_path, capsys):
    path = _write(tmp_path,
                  "[laws]\noffspring = 'table'\npmf = [0.4, 0.0, 0.6]\n")
    code = cli.main(["survival", "--config", path,
                     "--out", str(tmp_path / "out")])
    assert code == 3


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def test_lower_bound_artifacts(tmp_path):
    out = str(tmp_path / "out")
    code = cli.main(["lower-bound", "--out", out])
    assert code == 0
    blob = json.load(open(os.path.join(out, "lower_bound.json")))
    assert blob["command"] == "lower-bound"
    assert blob["config"]["run"]["seed"] == 42
    values = [row["lower_bound"] for row in blob["results"]]
    assert values[0] < values[1]
    lines = open(os.path.join(out, "lower_bound_table.csv")).read().splitlines()
    assert lines[0] == "n,estimate,se,lower,upper"
    assert len(lines) == 3


def test_survival_artifacts_and_overrides(tmp_path):
    path = _write(tmp_path, "[run]\ntrials = 2000\nn_list = [2, 4]\n")
    out = str(tmp_path / "out")
    code = cli.main(["survival", "--config", path, "--out", out,
                     "--seed", "9"])
    assert code == 0
    blob = json.load(open(os.path.join(out, "survival.json")))
    # CLI flag wins over the config file
    assert blob["config"]["run"]["seed"] == 9
    assert len(blob["results"]) == 2
    for rec in blob["results"]:
        assert 0.0 < rec["estimate"] < 1.0
        assert rec["se"] > 0
    assert os.path.exists(os.path.join(out, "survival_table.csv"))


def test_llt_passes_on_h2(tmp_path):
    path = _write(tmp_path, "[laws]\nhypothesis = 'H2'\n")
    out = str(tmp_path / "out")
    code = cli.main(["llt", "--config", path, "--out", out])
    assert code == 0
    blob = json.load(open(os.path.join(out, "llt.json")))
    assert blob["report"]["passed"] is True
    assert os.path.exists(os.path.join(out, "llt_table.csv"))


def test_llt_statistical_failure_exits_2(tmp_path, capsys):
    # horizons listed out of order make the sup-error sequence increase,
    # which the check must flag; the artifact is still written
    path = _write(tmp_path,
                  "[laws]\nhypothesis = 'H2'\n[run]\nn_list = [32, 8]\n")
    out = str(tmp_path / "out")
    code = cli.main(["llt", "--config", path, "--out", out])
    assert code == 2
    assert "FAILED" in capsys.readouterr().err
    blob = json.load(open(os.path.join(out, "llt.json")))
    assert blob["report"]["passed"] is False


def test_heat_kernel_subcommand(tmp_path):
    path = _write(tmp_path, "[laws]\nhypothesis = 'H2'\n")
    out = str(tmp_path / "out")
    assert cli.main(["heat-kernel", "--config", path, "--out", out]) == 0
    blob = json.load(open(os.path.join(out, "heat_kernel.json")))
    assert blob["report"]["passed"] is True


def test_stable_subcommand(tmp_path):
    out = str(tmp_path / "out")
    assert cli.main(["stable", "--out", out]) == 0
    blob = json.load(open(os.path.join(out, "stable.json")))
    assert blob["report"]["details"]["alpha"] == 1.0


def test_sample_na_points_inside_ball(tmp_path):
    path = _write(tmp_path, "[run]\ncount = 5\n")
    out = str(tmp_path / "out")
    assert cli.main(["sample-na", "--config", path, "--out", out]) == 0
    blob = json.load(open(os.path.join(out, "sample_na.json")))
    assert blob["count"] == 5
    assert 0.0 < blob["acceptance_rate"] < 1.0
    rows = open(os.path.join(out, "sample_na_points.csv")).read().splitlines()
    assert rows[0] == "cluster,x0,x1,x2"
    for row in rows[1:]:
        parts = row.split(",")
        pt = np.array([float(v) for v in parts[1:]])
        assert np.linalg.norm(pt) <= 1.0 + 1e-9


def test_invariance_subcommand(tmp_path):
    path = _write(tmp_path,
                  "[run]\nfield_n = 4\nm = 4\nfield_trials = 40\n")
    out = str(tmp_path / "out")
    assert cli.main(["invariance", "--config", path, "--out", out]) == 0
    blob = json.load(open(os.path.join(out, "invariance.json")))
    assert blob["report"]["passed"] is True
    assert blob["report"]["details"]["n"] == 4


def test_build_lambda_artifacts(tmp_path):
    path = _write(tmp_path,
                  "[truncation]\nK = 8\ntree_trials = 300\n")
    out = str(tmp_path / "out")
    assert cli.main(["build-lambda", "--config", path, "--out", out]) == 0
    blob = json.load(open(os.path.join(out, "build_lambda.json")))
    assert blob["theta"] == 0.5
    assert blob["cluster_count"] >= 0
    assert blob["i_a"]["estimate"] > 0
    assert os.path.exists(os.path.join(out, "lambda_points.csv"))


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

def test_identical_invocation_identical_bytes(tmp_path):
    path = _write(tmp_path, "[run]\ntrials = 2000\nn_list = [2, 4]\n")
    out = str(tmp_path / "out")

    def run():
        assert cli.main(["survival", "--config", path, "--out", out]) == 0
        return (open(os.path.join(out, "survival.json"), "rb").read(),
                open(os.path.join(out, "survival_table.csv"), "rb").read())

    first = run()
    os.remove(os.path.join(out, "survival.json"))
    second = run()
    assert first == second


def test_worker_count_does_not_change_estimates(tmp_path):
    path = _write(tmp_path, "[run]\ntrials = 4000\nn_list = [4]\n")

    def run(workers, sub):
        out = str(tmp_path / sub)
        assert cli.main(["survival", "--config", path, "--out", out,
                         "--workers", str(workers)]) == 0
        blob = json.load(open(os.path.join(out, "survival.json")))
        return blob["results"]

    assert run(1, "a") == run(2, "b")


def test_timestamps_only_in_log(tmp_path):
    out = str(tmp_path / "out")
    assert cli.main(["lower-bound", "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "run_log.txt"))
    blob = open(os.path.join(out, "lower_bound.json")).read()
    assert "20" + "26" not in blob  # no dates in the artifact
