from __future__ import annotations

import csv
import json

import pytest

from ssitl.cli import main
from ssitl.model import dump_model

from conftest import zero_rate_net


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_stability_example1(tmp_path, capsys):
    assert main(["stability", "--model", "example1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "coarsest_stable_level (safety 1): 10" in out
    rows = read_csv(tmp_path / "stability.csv")
    assert rows[0][0] == "tau_limit [s]" and 2.0e-4 <= float(rows[1][0]) <= 2.5e-4


def test_stability_example2(capsys):
    assert main(["stability", "--model", "example2"]) == 0
    assert "tau_limit: 1.000000e-05" in capsys.readouterr().out


def test_stability_unbounded(tmp_path, capsys):
    p = tmp_path / "grow.json"
    p.write_text(json.dumps({"species": ["A"], "initial": [5], "T": 1,
                             "reactions": [{"rate": 2.0, "reactants": {"A": 1}, "products": {"A": 2}}]}))
    assert main(["stability", "--model", str(p)]) == 0
    out = capsys.readouterr()
    assert "unbounded" in out.out and "positive real part" in out.out


def test_simulate_ssa_trajectories(tmp_path):
    assert main(["simulate", "--method", "ssa", "--paths", "5", "--trajectories", "--seed", "1",
                 "--out", str(tmp_path)]) == 0
    trajs = sorted(tmp_path.glob("trajectory_*.csv"))
    assert len(trajs) == 5
    rows = read_csv(trajs[0])
    assert rows[0] == ["time [s]", "S1 [molecules]", "S2 [molecules]", "S3 [molecules]"]
    assert float(rows[1][0]) == 0.0 and float(rows[-1][0]) == pytest.approx(0.2)
    assert len(read_csv(tmp_path / "finals.csv")) == 6
    assert (tmp_path / "manifest.json").exists()


def test_simulate_zero_rate(tmp_path):
    p = tmp_path / "zero.json"
    p.write_text(dump_model(zero_rate_net()))
    assert main(["simulate", "--model", str(p), "--method", "ssi", "--paths", "3", "--level", "2",
                 "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "finals.csv")[1:]
    assert all(r[1:3] == ["7", "3"] for r in rows)


def test_simulate_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--method", "ssi", "--paths", "4", "--level", "6", "--seed", "5",
                     "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "finals.csv").read_bytes() == (tmp_path / "b" / "finals.csv").read_bytes()


def test_missing_model_exit_code(tmp_path):
    assert main(["simulate", "--model", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 3


def test_bad_model_exit_code(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"species": ["A"], "initial": [1], "T": 1, "reactions": [{"rate": -1, "reactants": {"A": 1}}]}')
    assert main(["stability", "--model", str(p)]) == 3


def test_tol_must_be_positive(tmp_path):
    assert main(["estimate", "--tol", "0", "--out", str(tmp_path)]) == 2
    assert main(["estimate", "--tol", "-0.1", "--out", str(tmp_path)]) == 2


def test_numerical_error_exit_code(tmp_path):
    code = main(["simulate", "--method", "explicit", "--level", "4", "--paths", "200", "--out", str(tmp_path)])
    assert code == 4


def test_converge_single_level_reports_fit_error(tmp_path, capsys):
    assert main(["converge", "--levels", "2", "--samples", "300", "--out", str(tmp_path)]) == 0
    assert "fit error" in capsys.readouterr().err
    rows = read_csv(tmp_path / "convergence.csv")
    assert len(rows) == 2 and rows[1][0] == "2"
    assert "fit_error" in json.loads((tmp_path / "manifest.json").read_text())


def test_converge_slopes(tmp_path):
    assert main(["converge", "--levels", "1-3", "--samples", "500", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert "variance_slope" in doc and "weak_slope" in doc


def test_estimate_and_report(tmp_path, capsys):
    p = tmp_path / "zero.json"
    p.write_text(dump_model(zero_rate_net()))
    out = tmp_path / "est"
    assert main(["estimate", "--model", str(p), "--tol", "0.1", "--observable", "A", "--out", str(out)]) == 0
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["estimate"] == 7.0 and doc["replay"]["command"] == "estimate"
    rows = read_csv(out / "levels.csv")
    assert rows[0][:2] == ["level", "kind"] and rows[0][2].startswith("n_samples")
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    assert "estimate          7.000000" in capsys.readouterr().out


def test_calibrate(tmp_path, capsys):
    assert main(["calibrate", "--model", "example1", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "cost_model.json").read_text())
    assert doc["cost_model"]["gamma"] > doc["cost_model"]["eta"] > 1
