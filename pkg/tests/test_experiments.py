import csv
import json
from dataclasses import replace
from fractions import Fraction as F

import pytest

from qconsensus.dynamics import CONSENSUS, CYCLE
from qconsensus.errors import ParameterOutOfRange
from qconsensus.experiments import (
    SWEEP_HEADER,
    ExperimentConfig,
    forced_initial,
    parse_config,
    preset,
    run_experiment,
    run_single,
    sweep_C,
    uniform_initial,
    verify,
)


def test_uniform_initial_grid():
    x = uniform_initial(50, 7, 0, 100, 100)
    assert all(0 <= v <= 100 and (v * 100).denominator == 1 for v in x)
    assert x == uniform_initial(50, 7)
    assert x != uniform_initial(50, 8)


@pytest.mark.parametrize("target", [F(1, 2), F(0), F(1, 4)])
def test_forced_initial(target):
    for seed in range(10):
        x = forced_initial(11, seed, target)
        ave = sum(x) / 11
        assert ave - (ave.numerator // ave.denominator) == target
        # the last value stays near the others
        assert abs(x[-1] - sum(x[:-1]) / 10) <= F(11, 2)


def test_config_validation():
    with pytest.raises(ParameterOutOfRange):
        ExperimentConfig(runs=0)
    with pytest.raises(ParameterOutOfRange):
        ExperimentConfig(family="hypercube")
    with pytest.raises(ParameterOutOfRange):
        ExperimentConfig(init="explicit", n=3, x0=(F(1),))


def test_parse_config():
    text = """
    # forced-fractional ER sweep
    family = er
    n = 12
    p = 0.25
    C = 5/2
    init = forced
    target = 1/2
    runs = 3
    check = true
    sweep = p
    values = 0.2, 3/10
    """
    cfg, key, values = parse_config(text)
    assert cfg.n == 12 and cfg.p == F(1, 4) and cfg.C == F(5, 2) and cfg.check is True
    assert key == "p" and values == [F(1, 5), F(3, 10)]
    with pytest.raises(ValueError, match="unknown key"):
        parse_config("colour = red")
    with pytest.raises(ValueError):
        parse_config("C = 1e3")


def test_single_run_record():
    cfg = ExperimentConfig(n=10, init="forced", check=True)
    rec = run_single(cfg, 3)
    assert rec.verdict == CONSENSUS and rec.certificate is True
    assert rec.conserved and rec.violations == []
    assert F(rec.deviation) < 1


def test_failed_run_is_recorded():
    cfg = ExperimentConfig(n=2, family="path", weights="two_node", init="explicit", x0=(F(3, 10), F(53, 10)))
    rec = run_single(cfg, 0)
    assert rec.verdict == "failed" and "AssumptionViolated" in rec.error
    forced = run_single(replace(cfg, force=True), 0)
    assert forced.verdict == CYCLE and forced.d_inf_sq == "25/4" and forced.period == 2


def test_run_experiment_artifacts(tmp_path):
    cfg = ExperimentConfig(n=8, runs=4, seed=10, trace_sample=2, out=str(tmp_path))
    res = run_experiment(cfg)
    assert (tmp_path / "sweep.csv").exists()
    assert sorted(p.name for p in (tmp_path / "runs").iterdir()) == [f"{s}.json" for s in range(10, 14)]
    assert sorted(p.name for p in (tmp_path / "traces").iterdir()) == ["10.csv", "11.csv"]
    rows = list(csv.reader((tmp_path / "sweep.csv").open()))
    assert rows[0] == SWEEP_HEADER and len(rows) == 2
    cell = res.cells[0]
    # aggregates recompute from the retained per-run files
    recs = [json.loads((tmp_path / "runs" / f"{s}.json").read_text()) for s in range(10, 14)]
    ts = [r["t_conv"] for r in recs if r["verdict"] in (CONSENSUS, CYCLE)]
    assert cell.mean_tconv == F(sum(ts), len(ts))
    assert cell.count(CONSENSUS) + cell.count(CYCLE) == 4


def test_sweep_layout_and_reproducibility(tmp_path):
    cfg = ExperimentConfig(n=10, runs=5, init="forced", out=str(tmp_path / "a"))
    a = run_experiment(cfg, "p", [F(3, 10), F(1, 2)])
    b = run_experiment(replace(cfg, out=str(tmp_path / "b"), workers=2), "p", [F(3, 10), F(1, 2)])
    assert (tmp_path / "a" / "p=3_10" / "runs" / "0.json").exists()
    assert [c.row() for c in a.cells] == [c.row() for c in b.cells]
    assert (tmp_path / "a" / "sweep.csv").read_text() == (tmp_path / "b" / "sweep.csv").read_text()


def test_sweep_C_bounds():
    cfg = ExperimentConfig(n=8, runs=6, init="forced", target=F(0), p=F(1, 2))
    res, summary = sweep_C(cfg, [2, 10])
    assert [s.C for s in summary] == [2, 10]
    assert all(s.within_bound for s in summary)
    assert summary[1].max_deviation <= F(1, 5)
    with pytest.raises(ParameterOutOfRange):
        sweep_C(cfg, [F(3, 2)])


def test_presets():
    cfg, key, vals = preset("er-trend")
    assert (cfg.n, cfg.runs, key, len(vals)) == (30, 50, "p", 3)
    cfg, key, vals = preset("rgg-trend", full=True)
    assert (cfg.n, cfg.runs, key) == (100, 100, "radius")
    assert vals[3] == F(2146, 10000)
    with pytest.raises(ParameterOutOfRange):
        preset("table9")


def test_verify_suite_passes():
    res = verify(n=6, runs=8, seed=1)
    assert res.ok and res.runs == 16
    assert sum(res.verdicts.values()) == 16
