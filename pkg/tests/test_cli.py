import subprocess
import sys
from pathlib import Path

import pytest

from quorum_ra import harness
from quorum_ra.cli import EXIT_ASSUMPTION, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

SMALL = ["runs=30", "steps=120"]


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv("QUORUM_RA_SEED", raising=False)


def test_graph_gen_then_check(tmp_path, capsys):
    out = tmp_path / "g"
    assert main(["graph-gen", "-o", str(out), "graph.n=6", "graph.seed=3"]) == EXIT_OK
    gfile = out / "graph.txt"
    assert gfile.exists()
    assert main(["graph-check", str(gfile), "-o", str(tmp_path / "chk")]) == EXIT_OK
    text = capsys.readouterr().out
    assert "strongly_connected = true" in text and "n = 6" in text
    assert len(harness.read_csv(tmp_path / "chk" / "omega.csv")) == 6


def test_graph_check_names_assumption(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("n 3\n1 2\n2 3\n")
    assert main(["graph-check", str(bad), "-o", str(tmp_path / "o")]) == EXIT_ASSUMPTION
    assert "Assumption 1" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_step_size_violation(tmp_path):
    assert main(["bounds", "-o", str(tmp_path / "o"), "alpha=5"]) == EXIT_ASSUMPTION


@pytest.mark.parametrize("args", [["steps=10"], ["nonsense=1"], ["runs=lots"], ["positional"],
                                  ["graph.file=/nonexistent/graph.txt"]])
def test_config_errors(tmp_path, args, capsys):
    out = tmp_path / "o"
    assert main(["estimate", "-o", str(out), *args]) == EXIT_CONFIG
    assert "error" in capsys.readouterr().err
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []


def test_estimate_outputs_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["estimate", "-o", str(a), *SMALL]) == EXIT_OK
    assert main(["estimate", "-o", str(b), "--workers", "2", *SMALL]) == EXIT_OK
    names = sorted(p.name for p in a.iterdir())
    assert names == ["bounds.csv", "config.conf", "mse_x.csv", "mse_xbar.csv", "mse_z.csv",
                     "mse_zbar.csv", "rk.csv", "runs.csv"]
    for name in names:
        if name.endswith(".csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
    rows = harness.read_csv(a / "mse_xbar.csv")
    assert len(rows) == 121
    assert len(harness.read_csv(a / "runs.csv")) == 30


def test_seed_env_changes_output(tmp_path, monkeypatch):
    assert main(["estimate", "-o", str(tmp_path / "a"), *SMALL]) == EXIT_OK
    monkeypatch.setenv("QUORUM_RA_SEED", "99")
    assert main(["estimate", "-o", str(tmp_path / "b"), *SMALL]) == EXIT_OK
    assert (tmp_path / "a" / "mse_xbar.csv").read_bytes() != (tmp_path / "b" / "mse_xbar.csv").read_bytes()
    assert "seed = 99" in (tmp_path / "b" / "config.conf").read_text()


def test_tq_failures(tmp_path, capsys):
    args = ["rule.kind=tq", "runs=10", "steps=200"]
    assert main(["estimate", "-o", str(tmp_path / "a"), *args]) == EXIT_RUNTIME
    assert "allow-failures" in capsys.readouterr().err
    assert not (tmp_path / "a").exists()
    assert main(["estimate", "-o", str(tmp_path / "b"), "--allow-failures", *args]) == EXIT_OK
    runs = harness.read_csv(tmp_path / "b" / "runs.csv")
    assert any(r["fail_code"] != "0" for r in runs)


def test_failed_run_keeps_previous_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["estimate", "-o", str(out), *SMALL]) == EXIT_OK
    before = (out / "mse_xbar.csv").read_bytes()
    assert main(["estimate", "-o", str(out), "rule.kind=tq", "runs=10", "steps=200"]) == EXIT_RUNTIME
    assert (out / "mse_xbar.csv").read_bytes() == before
    assert not [p for p in tmp_path.iterdir() if "staging" in p.name]


def test_eigvec(tmp_path):
    out = tmp_path / "e"
    assert main(["eigvec", "-o", str(out), *SMALL]) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["config.conf", "mse_z.csv", "mse_zbar.csv",
                                                     "omega.csv"]


def test_bounds(tmp_path, capsys):
    assert main(["bounds", "-o", str(tmp_path)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "nu = " in text and "rhoQ = " in text
    row = harness.read_csv(tmp_path / "bounds.csv")[0]
    assert float(row["rhoQ"]) < 1 and float(row["nu"]) > 0


def test_compare_and_sweep(tmp_path):
    assert main(["compare", "-o", str(tmp_path / "c"), "runs=4", "steps=200"]) == EXIT_OK
    rows = harness.read_csv(tmp_path / "c" / "comparison.csv")
    assert [r["rule"] for r in rows] == ["prob-ra", "prob", "unif", "pq-ra", "tq-ra"]
    assert main(["sweep", "-o", str(tmp_path / "s"), "runs=2", "steps=200"]) == EXIT_OK
    rows = harness.read_csv(tmp_path / "s" / "sweep.csv")
    assert len(rows) == 6 and list(rows[0]) == list(harness.COMPARISON_HEADER)


def test_plot_files(tmp_path):
    pytest.importorskip("matplotlib")
    assert main(["estimate", "-o", str(tmp_path), "--plot", *SMALL]) == EXIT_OK
    assert (tmp_path / "mse_xbar.png").stat().st_size > 0


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "quorum_ra.cli", "graph-gen", "-o", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert Path(tmp_path / "graph.txt").exists()
