import json
import subprocess
import sys

from qconsensus.cli import main
from qconsensus.graph import read_edge_list


def _path3(tmp_path):
    p = tmp_path / "path3.txt"
    assert main(["gen-graph", "--family", "path", "--n", "3", "--out", str(p)]) == 0
    return p


def test_gen_graph(tmp_path):
    out = tmp_path / "er.txt"
    assert main(["gen-graph", "--family", "er", "--n", "12", "--p", "0.4", "--seed", "3", "--out", str(out)]) == 0
    g = read_edge_list(out)
    assert g.n == 12


def test_simulate_path3(tmp_path, capsys):
    g = _path3(tmp_path)
    out = tmp_path / "sim"
    code = main(["simulate", "--graph", str(g), "--weights", "modified", "--C", "2", "--x0", "0,1,2",
                 "--quantizer", "trunc", "--out", str(out)])
    assert code == 0
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["kind"] == "consensus"
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == "k,i,x_num,x_den,floor_x"
    # first step lands on (1/6, 1, 11/6)
    assert lines[4:7] == ["1,0,1,6,0", "1,1,1,1,1", "1,2,11,6,1"]


def test_simulate_refuses_bad_weights(tmp_path, capsys):
    g = _path3(tmp_path)
    assert main(["simulate", "--graph", str(g), "--weights", "metropolis", "--x0", "0,1,2"]) == 1
    assert "DominantDiagonal" in capsys.readouterr().err


def test_simulate_force_two_node(tmp_path, capsys):
    out = tmp_path / "s"
    code = main(["simulate", "--weights", "two_node", "--w", "1/25", "--x0", "3/10,5.3", "--force", "--out", str(out)])
    assert code == 0
    assert json.loads((out / "verdict.json").read_text()) == {"kind": "cycle", "t_conv": 0, "period": 2}


def test_usage_errors(tmp_path, capsys):
    g = _path3(tmp_path)
    assert main(["simulate", "--graph", str(g), "--x0", "0,1,2e3"]) == 1
    assert main(["simulate", "--graph", str(g), "--x0", "0,1"]) == 1
    assert main(["nonsense"]) == 1
    assert main([]) == 1
    assert main(["simulate", "--graph", str(tmp_path / "missing.txt"), "--x0", "0,1,2"]) == 1


def test_runtime_failure_exit(tmp_path, capsys):
    out = tmp_path / "g.txt"
    assert main(["gen-graph", "--family", "er", "--n", "30", "--p", "0.001", "--out", str(out)]) == 3


def test_analyze_roundtrip(tmp_path, capsys):
    g = _path3(tmp_path)
    out = tmp_path / "sim"
    main(["simulate", "--graph", str(g), "--x0", "0,1,23/10", "--out", str(out)])
    report = tmp_path / "r.json"
    inst = tmp_path / "i.csv"
    code = main(["analyze", "--graph", str(g), "--trace", str(out / "trace.csv"), "--verdict", str(out / "verdict.json"),
                 "--report", str(report), "--instrumentation", str(inst)])
    assert code == 0
    rep = json.loads(report.read_text())
    assert rep["applicable"] and rep["violations"] == []
    assert rep["drop_wait_bound"] == "48"
    assert inst.read_text().startswith("k,m,M,V_num,V_den")


def test_analyze_flags_tampered_trace(tmp_path, capsys):
    g = _path3(tmp_path)
    trace = tmp_path / "t.csv"
    trace.write_text("k,i,x_num,x_den,floor_x\n0,0,1,2,0\n0,1,1,1,1\n0,2,3,2,1\n1,0,1,4,0\n1,1,1,1,1\n1,2,7,4,1\n")
    code = main(["analyze", "--graph", str(g), "--trace", str(trace), "--report", str(tmp_path / "r.json")])
    assert code == 2
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["first_violation"] == "lyapunov_rise"


def test_verify_exit_zero(capsys):
    assert main(["verify", "--n", "10", "--runs", "50", "--seed", "7"]) == 0
    assert "0 failure(s)" in capsys.readouterr().out


def test_experiment_config(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("family = rgg\nn = 10\nc = 2\nruns = 3\nsweep = C\nvalues = 2, 3\n")
    out = tmp_path / "out"
    assert main(["experiment", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "sweep.csv").exists() and (out / "C=3" / "runs" / "2.json").exists()


def test_help_lists_config_keys():
    res = subprocess.run([sys.executable, "-m", "qconsensus.cli", "experiment", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "trace_sample" in res.stdout and "denominator" in res.stdout
