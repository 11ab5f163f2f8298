import json
import subprocess
import sys

import numpy as np
import pytest

from asyncbcd.cli import cli_main, parse_synthetic
from asyncbcd.traceio import read_trace, read_vector

SMALL = "synthetic:lasso,n=40,l=30,density=0.2,seed=1"


def test_theory_worked_example(capsys):
    assert cli_main(["theory", "--blocks", "100", "--rho", "2", "--tau", "1", "--inner", "2",
                     "--lres", "1", "--lnor", "1"]) == 0
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("gamma_max"))
    assert float(line.split("=")[1]) == pytest.approx(0.0517766952966, abs=1e-6)


def test_theory_json_and_infeasible(capsys):
    assert cli_main(["theory", "--blocks", "64", "--format", "json"]) == 0
    cap = capsys.readouterr()
    assert json.loads(cap.out)["gamma_max"] is None
    assert "warning" in cap.err


def test_theory_rejects_bad_params(capsys):
    assert cli_main(["theory", "--rho", "0.5"]) == 1
    assert "error" in capsys.readouterr().err


def test_solve_defaults_smoke(tmp_path, capsys):
    tr, out = tmp_path / "t.csv", tmp_path / "x.txt"
    assert cli_main(["solve", "--trace", str(tr), "--out", str(out)]) == 0
    comment, rows = read_trace(tr)
    assert len(rows) == 10
    spec = json.loads(comment)
    assert spec["resolved"]["gamma"] > 0 and spec["epochs"] == 10
    assert read_vector(out).shape == (100,)


def test_solve_trace_byte_identical(tmp_path, capsys):
    args = ["solve", "--data", SMALL, "--gamma", "0.2", "--epochs", "4", "--fstar", "auto",
            "--timing", "false", "--trace", str(tmp_path / "t.csv")]
    assert cli_main(args) == 0
    first = (tmp_path / "t.csv").read_bytes()
    assert cli_main(args) == 0
    assert (tmp_path / "t.csv").read_bytes() == first
    _, rows = read_trace(tmp_path / "t.csv")
    assert all(r["gap"] >= -1e-9 for r in rows)
    assert all(r["time_ms"] is None for r in rows)


def test_infeasible_auto_gamma_warns(capsys):
    assert cli_main(["solve", "--data", SMALL, "--blocks", "10", "--epochs", "1"]) == 0
    assert "infeasible" in capsys.readouterr().err


def test_libsvm_and_partition_file(tmp_path, capsys):
    d = tmp_path / "d.svm"
    d.write_text("1 1:1 2:0.5\n-1 2:1 3:2\n0.5 1:0.3 3:-1\n")
    part = tmp_path / "p.txt"
    part.write_text("0 2\n1\n")
    assert cli_main(["solve", "--data", str(d), "--blocks", str(part), "--reg", "group_l2",
                     "--lambda", "0.1", "--gamma", "0.3", "--epochs", "3", "--format", "json"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["epochs"] == 3 and np.isfinite(res["objective"])


def test_config_file_and_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data = {SMALL}\nepochs = 2\ngamma = 0.1\nthreads = 2\n")
    tr = tmp_path / "t.csv"
    assert cli_main(["solve", "--config", str(cfg), "--epochs", "3", "--trace", str(tr)]) == 0
    comment, rows = read_trace(tr)
    spec = json.loads(comment)
    assert len(rows) == 3 and spec["threads"] == 2 and spec["gamma"] == 0.1


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour = blue\n")
    assert cli_main(["solve", "--config", str(cfg)]) == 1
    assert "unknown key" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["solve", "--bogus"], ["frobnicate"], ["solve", "--gamma", "fast"],
                                  ["bench", "--threads", "0"]])
def test_usage_errors_nonzero(argv, capsys):
    assert cli_main(argv) != 0
    assert capsys.readouterr().err


@pytest.mark.parametrize("argv", [["solve", "--data", "/nonexistent.svm"],
                                  ["solve", "--data", "synthetic:lasso,q=1"],
                                  ["solve", "--data", "synthetic:lasso,n=0"],
                                  ["solve", "--data", SMALL, "--blocks", "999"],
                                  ["solve", "--data", SMALL, "--gamma", "500", "--epochs", "3"]])
def test_runtime_errors_exit_1(argv, capsys):
    assert cli_main(argv) == 1
    assert "error:" in capsys.readouterr().err


def test_bench_table(capsys):
    assert cli_main(["bench", "--data", SMALL, "--threads", "1,2", "--epochs", "2", "--gamma", "0.1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[:3] == ["threads", "epoch_ms", "speedup"]
    assert [l.split()[0] for l in lines[1:]] == ["1", "2"]
    assert float(lines[1].split()[2]) == 1.0


def test_validate(capsys):
    assert cli_main(["validate", "--data", "synthetic:logistic,n=20,l=30", "--trials", "50"]) == 0
    assert capsys.readouterr().out.strip().endswith("PASS")


def test_parse_synthetic():
    s = parse_synthetic("synthetic:strongly_convex,n=20,l=40,density=0.5,noise=0,seed=3")
    assert (s.kind, s.n, s.l, s.density, s.noise, s.seed) == ("strongly_convex", 20, 40, 0.5, 0.0, 3)
    assert parse_synthetic("synthetic").kind == "lasso"


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "asyncbcd", "theory", "--blocks", "100", "--tau", "1",
                        "--inner", "2"], capture_output=True, text=True)
    assert r.returncode == 0 and "gamma_max" in r.stdout
