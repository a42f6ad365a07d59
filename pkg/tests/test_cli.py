import json
import subprocess
import sys

import numpy as np
import pytest

from djqe.cli import main
from djqe.core import Dataset, read_csv, write_csv

FAST = ["--mlp-epochs", "30", "--gamma", "0.1", "--m", "5"]


def test_generate_shape_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["generate", "--scenario", "s4", "--n", "40", "--p", "3", "--seed", "2", "--out", str(a)]) == 0
    assert main(["generate", "--scenario", "s4", "--n", "40", "--p", "3", "--seed", "2", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    d = read_csv(a)
    assert (d.n, d.p) == (40, 3)
    assert "oracle value 1.600000" in capsys.readouterr().out


def test_generate_rejects_too_few_features(tmp_path):
    assert main(["generate", "--scenario", "s4", "--n", "10", "--p", "2",
                 "--out", str(tmp_path / "x.csv")]) == 1
    assert not (tmp_path / "x.csv").exists()


def test_evaluate_constant_reward(tmp_path):
    rng = np.random.default_rng(0)
    data = tmp_path / "d.csv"
    write_csv(Dataset(rng.normal(size=(50, 2)), rng.uniform(size=50), np.full(50, 2.5)), data)
    out = tmp_path / "r.json"
    assert main(["evaluate", "--data", str(data), "--policy", "constant:0.3", "--out", str(out)] + FAST) == 0
    doc = json.loads(out.read_text())
    assert doc["value"] == pytest.approx(2.5, abs=1e-12)
    assert doc["estimator_variant"] == "standard_dr"


def test_evaluate_variant_and_bellman_dump(tmp_path):
    data = tmp_path / "d.csv"
    main(["generate", "--scenario", "s1", "--n", "60", "--p", "2", "--out", str(data)])
    out = tmp_path / "r.json"
    rc = main(["evaluate", "--data", str(data), "--policy", "optimal:s1", "--estimator-variant",
               "paper-literal", "--partitioner", "exact-dp", "--dump-bellman", str(tmp_path / "bell"),
               "--out", str(out)] + FAST)
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["estimator_variant"] == "paper_literal"
    assert doc["config"]["partitioner"] == "exact_dp"
    assert (tmp_path / "bell_fold0.csv").exists() and (tmp_path / "bell_fold1.csv").exists()


def test_evaluate_policy_file(tmp_path):
    data = tmp_path / "d.csv"
    main(["generate", "--scenario", "s1", "--n", "40", "--p", "2", "--out", str(data)])
    pol = tmp_path / "pi.csv"
    pol.write_text("a\n" + "0.5\n" * 40)
    other = tmp_path / "r2.json"
    main(["evaluate", "--data", str(data), "--policy", "constant:0.5", "--out", str(other)] + FAST)
    out = tmp_path / "r.json"
    assert main(["evaluate", "--data", str(data), "--policy", str(pol), "--out", str(out)] + FAST) == 0
    assert json.loads(out.read_text())["value"] == json.loads(other.read_text())["value"]
    pol.write_text("a\n0.5\n")
    assert main(["evaluate", "--data", str(data), "--policy", str(pol)] + FAST) == 1


def test_unknown_method_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["benchmark", "--n", "50", "--methods", "djqe,ipw"])
    assert exc.value.code == 1
    err = capsys.readouterr().err
    assert "kernel-dr" in err and "djqe" in err


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["benchmark", "--frobnicate"])
    assert exc.value.code == 1


def test_missing_input_leaves_no_outputs(tmp_path):
    prefix = tmp_path / "cal"
    assert main(["calibrate", "--data", str(tmp_path / "nope.csv"), "--out", str(prefix)]) == 2
    assert list(tmp_path.iterdir()) == []
    assert main(["evaluate", "--data", str(tmp_path / "nope.csv"), "--policy", "identity"]) == 2


def test_config_file_precedence(tmp_path, capsys):
    data = tmp_path / "d.csv"
    main(["generate", "--scenario", "s1", "--n", "40", "--p", "2", "--out", str(data)])
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"gamma_grid": [0.01, 0.2], "m": 4, "folds": 3, "mlp_epochs": 20}))
    out = tmp_path / "r.json"
    capsys.readouterr()
    assert main(["evaluate", "--config", str(cfg), "--data", str(data), "--policy", "constant:0.2",
                 "--gamma", "0.3", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["config"]["gamma"] == 0.3
    assert doc["config"]["m"] == 4 and doc["config"]["folds"] == 3
    header = json.loads(capsys.readouterr().out.splitlines()[0][2:])
    assert header["settings"]["gamma"] == 0.3 and "gamma_grid" not in header["settings"]
    cfg.write_text(json.dumps({"gama": 1}))
    assert main(["evaluate", "--config", str(cfg), "--data", str(data), "--policy", "identity"]) == 1


def test_benchmark_csv_deterministic(tmp_path):
    args = ["benchmark", "--scenario", "s1", "--n", "60", "--p", "2", "--reps", "2",
            "--methods", "djqe,kernel-dr"] + FAST
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "scenario,n,method,bias,sd,mse,reps,seed"
    assert [ln.split(",")[2] for ln in lines[1:]] == ["djqe", "kernel-dr"]


def test_benchmark_single_rep_warns(tmp_path, capsys):
    assert main(["benchmark", "--n", "40", "--p", "2", "--reps", "1", "--methods", "oracle",
                 "--out", str(tmp_path / "o.csv")]) == 0
    assert "warning" in capsys.readouterr().err
    row = (tmp_path / "o.csv").read_text().splitlines()[1].split(",")
    assert float(row[4]) == 0.0


def test_calibrate_outputs(tmp_path, capsys):
    data = tmp_path / "d.csv"
    main(["generate", "--scenario", "s4", "--n", "100", "--p", "3", "--out", str(data)])
    prefix = tmp_path / "cal"
    assert main(["calibrate", "--data", str(data), "--sim-n", "500", "--grid", "50",
                 "--mlp-epochs", "40", "--out", str(prefix)]) == 0
    sim = read_csv(tmp_path / "cal_data.csv")
    assert sim.n == 500
    assert len((tmp_path / "cal_policy.csv").read_text().splitlines()) == 501
    info = json.loads((tmp_path / "cal_calibration.json").read_text())
    assert info["n_simulated"] == 500 and info["sigma_hat"] > 0
    assert "sigma_hat" in capsys.readouterr().out


def test_console_script_runs(tmp_path):
    out = tmp_path / "g.csv"
    proc = subprocess.run([sys.executable, "-m", "djqe.cli", "generate", "--scenario", "toy",
                           "--n", "5", "--p", "1", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert read_csv(out).n == 5
