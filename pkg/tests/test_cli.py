import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from qvhi.cli import bundled_configs, load_config, main


def body(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# generated ")
    return lines[1:]


def table(path):
    return list(csv.reader(body(path)))


def kv(path):
    return {r[0]: r[1] for r in table(path)[1:]}


def run(tmp_path, command, config, *extra):
    return main([command, "--config", str(config), "--out", str(tmp_path), *extra])


def test_bundled_configs_are_listed():
    names = bundled_configs()
    for name in ("demo-1d-remark43", "demo-smallness-violated", "demo-fem-obstacle", "demo-2d-oracle"):
        assert name in names


def test_solve_remark43(tmp_path, capsys):
    assert run(tmp_path, "solve", "demo-1d-remark43") == 0
    s = kv(tmp_path / "solve_summary.csv")
    assert s["converged"] == "true"
    assert float(s["u_0"]) == pytest.approx(0.25, abs=1e-8)
    hist = table(tmp_path / "solve_history.csv")
    assert hist[0] == ["iteration", "outer_residual", "norm_v", "norm_w_X", "feasibility"]
    assert len(hist) > 1
    assert "converged=True" in capsys.readouterr().out


def test_smallness_violation_exit_code(tmp_path, capsys):
    assert run(tmp_path, "solve", "demo-smallness-violated") == 1
    err = capsys.readouterr().err
    assert "(H0)" in err and "smallness" in err


def test_vi_reduction_matches_plain_vi(tmp_path):
    assert run(tmp_path, "solve", "demo-1d-vi-reduction") == 0
    s = kv(tmp_path / "solve_summary.csv")
    assert float(s["u_0"]) == pytest.approx(1.0, abs=1e-8)
    assert float(s["vi_difference"]) <= 1e-8


def test_constraint_family_config(tmp_path):
    assert run(tmp_path, "solve", "demo-1d-constraint-family") == 0
    assert float(kv(tmp_path / "solve_summary.csv")["u_0"]) == pytest.approx(2.0, abs=1e-8)


def test_bounds_command(tmp_path):
    assert run(tmp_path, "bounds", "demo-1d-remark43") == 0
    s = kv(tmp_path / "bounds.csv")
    assert s["audit_R1"] == "true" and s["audit_R2"] == "true"
    assert float(s["R2"]) == pytest.approx(float(s["R1"]))


def test_sample_command(tmp_path):
    assert run(tmp_path, "sample", "demo-1d-remark43") == 0
    s = kv(tmp_path / "sample_summary.csv")
    assert s["n_solutions"] == "1" and s["n_starts"] == "10"
    runs = table(tmp_path / "sample_runs.csv")
    assert len(runs) == 11


def test_oracle_compare(tmp_path):
    assert run(tmp_path, "oracle-compare", "demo-2d-oracle") == 0
    rows = table(tmp_path / "oracle_compare.csv")
    solver = [r for r in rows[1:] if r[0] == "solver"]
    oracle = [r for r in rows[1:] if r[0] == "oracle"]
    assert len(solver) == 3 and len(oracle) >= 1
    assert all(float(r[3]) <= 2 * 0.005 for r in solver if r[4] == "true")


def test_mosco_shrinking_ball(tmp_path):
    assert run(tmp_path, "mosco", "demo-mosco-shrinking-ball") == 0
    rows = table(tmp_path / "mosco.csv")[1:]
    errs = np.array([float(r[1]) for r in rows])
    assert [int(r[0]) for r in rows] == [1, 10, 100, 1000]
    assert np.all(np.diff(errs) < 0) and errs[-1] <= 1e-3 + 1e-8
    assert np.allclose(errs, [1.0, 0.1, 0.01, 0.001], atol=1e-6)


def test_fem_poisson_table(tmp_path):
    assert run(tmp_path, "fem", "demo-fem-poisson") == 0
    rows = table(tmp_path / "fem_convergence.csv")[2:]
    for r in rows:
        assert 3.4 <= float(r[4]) <= 4.6 and 1.7 <= float(r[5]) <= 2.3


def test_fem_smallness_sweep(tmp_path):
    assert run(tmp_path, "fem", "demo-fem-smallness") == 0
    rows = table(tmp_path / "fem_smallness.csv")[1:]
    assert [r[2] for r in rows] == ["true", "true", "false", "false"]


def test_fem_obstacle(tmp_path):
    assert run(tmp_path, "fem", "demo-fem-obstacle") == 0
    s = kv(tmp_path / "fem_summary.csv")
    assert s["converged"] == "true"
    assert float(s["max_abs_S3_minus_k2"]) <= 1e-8
    assert float(s["max_u"]) > 0
    hyp = {r[0]: r[1] for r in table(tmp_path / "fem_hypotheses.csv")[1:]}
    assert hyp["obstacle: k2 not identically 0"] == "false"
    nodal = table(tmp_path / "fem_nodal.csv")
    assert nodal[0] == ["x", "y", "value"] and len(nodal) == 1 + 17 * 17


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = load_config("demo-1d-remark43")
    cfg["tolerance"] = 1.0
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg))
    assert run(tmp_path, "solve", p) == 1
    assert "tolerance" in capsys.readouterr().err
    cfg = load_config("demo-1d-remark43")
    cfg["problem"]["extra"] = 0
    p.write_text(json.dumps(cfg))
    assert run(tmp_path, "solve", p) == 1


def test_missing_config_is_a_data_error(tmp_path):
    assert run(tmp_path, "solve", "no-such-config") == 1


def test_csv_bodies_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "solve", "demo-1d-remark43") == 0
    assert run(b, "solve", "demo-1d-remark43", "--threads", "2") == 0
    for name in ("solve_summary.csv", "solve_history.csv"):
        assert body(a / name) == body(b / name)


def test_seed_override_and_logging(tmp_path):
    env = dict(os.environ, QVHI_LOG="info")
    proc = subprocess.run([sys.executable, "-m", "qvhi.cli", "solve", "--config", "demo-1d-remark43",
                           "--out", str(tmp_path), "--seed", "7"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert "INFO" in proc.stderr
    quiet = subprocess.run([sys.executable, "-m", "qvhi.cli", "solve", "--config", "demo-1d-remark43",
                            "--out", str(tmp_path)], capture_output=True, text=True,
                           env=dict(os.environ, QVHI_LOG="error"))
    assert quiet.returncode == 0 and "INFO" not in quiet.stderr
