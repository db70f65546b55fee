import json

import pytest
from click.testing import CliRunner

from qmlab.cli import eval_angle, main


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args, env=None):
    return runner.invoke(main, list(args), env=env, catch_exceptions=False)


def test_eval_angle_forms():
    import math

    assert eval_angle("3pi/4") == pytest.approx(3 * math.pi / 4)
    assert eval_angle("pi") == pytest.approx(math.pi)
    assert eval_angle("-pi/2") == pytest.approx(-math.pi / 2)
    assert eval_angle("0.25") == 0.25


def test_eprb_chsh_tsirelson(runner, tmp_path):
    r = invoke(runner, "eprb", "chsh", "--angles", "tsirelson", "--d", "1", "--out", str(tmp_path))
    assert r.exit_code == 0
    assert "|S| 2.82842712" in r.output
    data = json.loads((tmp_path / "chsh.json").read_text())
    assert data["abs_S"] == pytest.approx(2.8284271247461903, abs=1e-10)


def test_eprb_chsh_pi_angles_match_tsirelson(runner):
    a = invoke(runner, "eprb", "chsh", "--angles", "0,pi/2,pi/4,3pi/4", "--d", "1").output
    b = invoke(runner, "eprb", "chsh", "--d", "1").output
    assert a == b


def test_eprb_dist_writes_files(runner, tmp_path):
    r = invoke(runner, "eprb", "dist", "--d", "2", "--out", str(tmp_path))
    assert r.exit_code == 0
    assert (tmp_path / "distributions.csv").exists()
    data = json.loads((tmp_path / "distributions.json").read_text())
    assert len(data) == 4


def test_born_command_singlet_parallel(runner):
    r = invoke(runner, "born", "--angles", "0,0,0,0", "--d", "1")
    assert r.exit_code == 0
    assert "p(+1,+1) 0" in r.output
    assert "p(+1,-1) 0.5" in r.output


def test_conditions_report_all_models(runner, tmp_path):
    r = invoke(runner, "conditions", "report", "--all-models", "--d", "16", "--n", "200", "--out", str(tmp_path))
    assert r.exit_code == 0
    rows = [line for line in r.output.splitlines() if line.startswith("| ") and "---" not in line][1:]
    assert [row.split("|")[1].strip() for row in rows] == [
        "born-qm", "lambda-many-counting", "lambda-one", "deterministic-local"]
    assert r.output in (tmp_path / "report.md").read_text()
    data = json.loads((tmp_path / "conditions.json").read_text())
    assert all(d["consistent"] for d in data)


def test_expand_valid_and_counts(runner, tmp_path):
    r = invoke(runner, "expand", "--dim", "64", "--n", "10", "--seed", "7", "--verify", "--out", str(tmp_path))
    assert r.exit_code == 0
    assert "valid true" in r.output
    assert (tmp_path / "expansion.json").exists()
    r = invoke(runner, "expand", "--dim", "64", "--n", "10", "--seed", "7", "--cells", "4",
               "--out", str(tmp_path / "cells"))
    assert r.exit_code == 0
    rows = (tmp_path / "cells" / "expansion_summary.csv").read_text().splitlines()
    assert rows[0] == "n,cell,m,cats,lower,upper" and len(rows) == 5
    for row in rows[1:]:
        n, _, m, c, lower, upper = row.split(",")
        assert float(lower) == int(m) / int(n) and float(upper) == (int(m) + int(c)) / int(n)
    line = next(line for line in r.output.splitlines() if line.startswith("counts "))
    counts = line.split()
    assert counts[5] == "cats"
    assert sum(int(c) for c in counts[1:5]) + int(counts[6]) == 10


def test_expand_infeasible_is_config_error(runner):
    r = invoke(runner, "expand", "--dim", "4", "--n", "10")
    assert r.exit_code == 2
    assert "config error" in r.output


def test_expand_seed_from_environment(runner):
    a = invoke(runner, "expand", "--dim", "8", "--n", "4", env={"QMLAB_SEED": "3"}).output
    b = invoke(runner, "expand", "--dim", "8", "--n", "4", "--seed", "3").output
    assert a == b
    bad = runner.invoke(main, ["expand", "--dim", "8", "--n", "4"], env={"QMLAB_SEED": "x"})
    assert bad.exit_code == 2


def test_sweep_theta_rows(runner, tmp_path):
    r = invoke(runner, "sweep", "theta", "--grid", "pi,pi/2,0.1", "--out", str(tmp_path))
    assert r.exit_code == 0
    lines = r.output.strip().splitlines()
    assert lines[0] == "theta,E,one_plus_E,quadratic_ratio"
    pi_row, half_row, small_row = (line.split(",") for line in lines[1:])
    assert float(pi_row[1]) == pytest.approx(1.0, abs=1e-9)
    assert float(half_row[1]) == pytest.approx(0.0, abs=1e-9)
    assert small_row[3] == "0.499583472"
    assert (tmp_path / "sweep_theta.csv").read_text() == r.output


@pytest.mark.parametrize("grid", ["", "0", "4", "-0.1"])
def test_sweep_rejects_bad_grid(runner, grid):
    assert invoke(runner, "sweep", "theta", "--grid", grid).exit_code == 2


def test_malformed_json_reports_location(runner, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"a": [0, 0, 1],\n "b": }')
    r = invoke(runner, "eprb", "chsh", "--config", str(cfg))
    assert r.exit_code == 2
    assert "line 2" in r.output and "column" in r.output


def test_unknown_field_and_extension(runner, tmp_path):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"a": [0, 0, 1], "a_prime": [1, 0, 0], "b": [0, 0, 1], "b_prime": [1, 0, 0],
                               "colour": 1}))
    r = invoke(runner, "eprb", "chsh", "--config", str(cfg))
    assert r.exit_code == 2 and "colour" in r.output
    yaml = tmp_path / "s.yaml"
    yaml.write_text("a: 1")
    assert invoke(runner, "eprb", "chsh", "--config", str(yaml)).exit_code == 2


def test_non_unit_direction_rejected(runner, tmp_path):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"a": [0, 0, 2], "a_prime": [1, 0, 0], "b": [0, 0, 1], "b_prime": [1, 0, 0]}))
    assert invoke(runner, "eprb", "chsh", "--config", str(cfg)).exit_code == 2


def test_toml_config_and_flag_override(runner, tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text('a = [0.0, 0.0, 1.0]\na_prime = [0.0, 0.0, 1.0]\nb = [0.0, 0.0, 1.0]\n'
                   'b_prime = [0.0, 0.0, 1.0]\nd_a = 1\nd_b = 1\n')
    r = invoke(runner, "eprb", "chsh", "--config", str(cfg))
    assert r.exit_code == 0
    assert "S -2" in r.output
    r = invoke(runner, "eprb", "chsh", "--config", str(cfg), "--angles", "tsirelson")
    assert "|S| 2.82842712" in r.output


def test_product_state_flags(runner):
    r = invoke(runner, "eprb", "chsh", "--state", "product", "--chi-a", "1,0", "--chi-b", "0,1", "--d", "1")
    assert r.exit_code == 0
    missing = invoke(runner, "eprb", "chsh", "--state", "product", "--chi-a", "1,0")
    assert missing.exit_code == 2


def test_lambda_one_run_is_byte_identical(runner, tmp_path):
    args = ["lambda-one", "run", "--d", "16", "--n", "200", "--trials", "2000", "--seed", "5"]
    a = invoke(runner, *args, "--out", str(tmp_path / "a"))
    b = invoke(runner, *args, "--workers", "3", "--out", str(tmp_path / "b"))
    assert a.exit_code == b.exit_code == 0
    assert a.output == b.output
    for name in ("lambda_one.json", "lambda_one.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_lambda_one_run_config_file(runner, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"scenario": {"a": [0, 0, 1], "a_prime": [1, 0, 0], "b": [0, 0, 1],
                                            "b_prime": [1, 0, 0], "d_a": 8, "d_b": 8},
                               "n": 40, "trials": 100, "seed": 2, "schedule": "round-robin"}))
    r = invoke(runner, "lambda-one", "run", "--run-config", str(cfg))
    assert r.exit_code == 0
    assert "S_hat" in r.output
    override = invoke(runner, "lambda-one", "run", "--run-config", str(cfg), "--seed", "3")
    assert override.output != r.output
    cfg.write_text(json.dumps({"scenario": {}, "trails": 1}))
    assert invoke(runner, "lambda-one", "run", "--run-config", str(cfg)).exit_code == 2


def test_verify_selected_criteria(runner, tmp_path):
    ok = invoke(runner, "verify", "--only", "6,10", "--out", str(tmp_path))
    assert ok.exit_code == 0
    assert "2/2 criteria passed" in ok.output
    data = json.loads((tmp_path / "verify.json").read_text())
    assert [d["criterion"] for d in data] == [6, 10]
    assert invoke(runner, "verify", "--only", "12").exit_code == 2


def test_verify_failing_criterion_exits_one(runner):
    r = invoke(runner, "verify", "--only", "1")
    assert r.exit_code == 1
    assert r.output.startswith("[FAIL]  1.")
