import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import QUANTIZERS, dense_metropolis, dense_step, oracle_simulate
from qconsensus.dynamics import (
    CONSENSUS,
    CYCLE,
    UNDECIDED,
    Trace,
    Verdict,
    check_conservation,
    naive_quantized_step,
    read_trace_csv,
    read_verdict_json,
    simulate,
    simulate_linear,
    step,
    write_trace_csv,
    write_verdict_json,
)
from qconsensus.errors import AssumptionViolated, ConnectivityFailure
from qconsensus.experiments import uniform_initial
from qconsensus.graph import complete_graph, erdos_renyi, path_graph
from qconsensus.quantizer import QuantizerKind
from qconsensus.weights import WeightMatrix, metropolis, modified_metropolis, two_node_cyclic

T = QuantizerKind("trunc")
XI, K, W_BAD = F(3, 10), 5, F(1, 25)


def test_step_two_node():
    W = two_node_cyclic(W_BAD)
    assert step(W, T, [XI, XI + K]) == [XI + (1 - W_BAD) * K, XI + K - (1 - W_BAD) * K]
    assert step(W, T, [XI, XI + K]) == [F(51, 10), F(1, 2)]


def test_step_path3():
    g = path_graph(3)
    W = modified_metropolis(g, 2)
    x = [F(0), F(1), F(2)]
    assert step(W, T, x) == [F(1, 6), F(1), F(11, 6)]
    assert tuple(step(W, T, x)) == dense_step(dense_metropolis(3, g.edges, 2), x, QUANTIZERS["trunc"])


def test_step_fixed_point():
    W = modified_metropolis(complete_graph(4), 3)
    x = [F(7, 3), F(2), F(29, 10), F(21, 8)]
    assert step(W, T, x) == x


def test_two_node_cycle_toggles():
    W = two_node_cyclic(W_BAD)
    assert W_BAD * K < min(XI, 1 - XI)
    tr = simulate(W, T, [XI, XI + K], max_iters=100, force=True)
    v = tr.verdict
    assert v.kind == CYCLE and v.t_conv <= 1 and v.period == 2
    for st in tr.states:
        even = st.k % 2 == 0
        xa = XI if even else XI + (1 - W_BAD) * K
        xb = XI + K if even else XI + W_BAD * K
        assert st.x == (xa, xb)


def test_bad_design_refused_without_force():
    with pytest.raises(AssumptionViolated) as info:
        simulate(two_node_cyclic(W_BAD), T, [XI, XI + K])
    assert ("DominantDiagonal", (0,)) in info.value.violations


def test_consensus_at_start():
    W = modified_metropolis(path_graph(4), 2)
    tr = simulate(W, T, [F(3, 2), F(7, 4), F(17, 10), F(1)])
    assert tr.verdict.kind == CONSENSUS and tr.verdict.k0 == 0 and tr.verdict.level == 1


# verdicts frozen from the dense oracle (tests/oracles.py) on ER(10, 0.3), seed 3, C = 2
GOLDEN = [("trunc", 53, 50), ("ceil", 54, 51), ("round", 74, 51)]


@pytest.mark.parametrize("qv, k0, level", GOLDEN)
def test_golden_consensus(qv, k0, level):
    g = erdos_renyi(10, 0.3, seed=3)
    tr = simulate(modified_metropolis(g, 2), QuantizerKind(qv), uniform_initial(10, 3), graph=g)
    assert (tr.verdict.kind, tr.verdict.k0, tr.verdict.level) == (CONSENSUS, k0, level)
    xs = tr.terminal_states()[0]
    assert max(xs) - min(xs) < 1


def test_golden_cycle():
    # oracle: cycle entered at 38 with period 6
    g = erdos_renyi(10, 0.3, seed=0)
    tr = simulate(modified_metropolis(g, 2), T, uniform_initial(10, 0), graph=g)
    assert (tr.verdict.kind, tr.verdict.t_conv, tr.verdict.period) == (CYCLE, 38, 6)
    assert len(tr.terminal) == 6
    assert tr.state(38) == tr.state(44)
    # minimal period: no earlier repeat inside the cycle
    assert len({tr.state(k) for k in range(38, 44)}) == 6


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000), st.sampled_from(["trunc", "ceil", "round"]), st.sampled_from([2, 3, F(5, 2)]))
def test_matches_oracle(n, seed, qv, C):
    try:
        g = erdos_renyi(n, 0.5, seed=seed, retries=30)
    except ConnectivityFailure:
        return
    x0 = uniform_initial(n, seed, 0, 20, 10)
    tr = simulate(modified_metropolis(g, C), QuantizerKind(qv), x0, graph=g)
    kind, start, period, states = oracle_simulate(dense_metropolis(n, g.edges, C), x0, QUANTIZERS[qv])
    assert tr.verdict.kind == kind
    assert tr.verdict.terminal_start == start
    assert tr.verdict.period == period
    assert [s.x for s in tr.states] == states


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 14), st.integers(0, 10_000), st.sampled_from(["trunc", "ceil", "round", "prob"]))
def test_conservation_and_monotone_floors(n, seed, qv):
    try:
        g = erdos_renyi(n, 0.4, seed=seed, retries=30)
    except ConnectivityFailure:
        return
    x0 = uniform_initial(n, seed)
    tr = simulate(modified_metropolis(g, 2), QuantizerKind(qv, seed=seed), x0, max_iters=5000, graph=g)
    assert tr.conserved and check_conservation(tr)
    if qv == "prob":
        return
    # the quantized levels are monotone: floor for trunc, ceil for ceil, floor(x + 1/2) for round
    level = {"trunc": math.floor, "ceil": math.ceil, "round": lambda v: math.floor(v + F(1, 2))}[qv]
    levels = [[level(v) for v in s.x] for s in tr.states]
    ms = [min(f) for f in levels]
    Ms = [max(f) for f in levels]
    assert ms == sorted(ms)
    assert Ms == sorted(Ms, reverse=True)
    assert tr.verdict.kind in (CONSENSUS, CYCLE)


def test_non_unit_step_matches_scaled_system():
    g = erdos_renyi(8, 0.5, seed=1)
    W = modified_metropolis(g, 2)
    eps = F(1, 4)
    x0 = uniform_initial(8, 1, 0, 10, 8)
    a = simulate(W, QuantizerKind("trunc", eps), x0, graph=g)
    b = simulate(W, T, [v / eps for v in x0], graph=g)
    assert [tuple(v / eps for v in s.x) for s in a.states] == [s.x for s in b.states]


def test_deterministic():
    g = erdos_renyi(12, 0.3, seed=5)
    W = modified_metropolis(g, 2)
    x0 = uniform_initial(12, 5)
    a, b = simulate(W, T, x0), simulate(W, T, x0)
    assert all(np.array_equal(u, v) for u, v in zip(a.raw, b.raw))


def test_prob_runs_reproducible():
    g = erdos_renyi(8, 0.5, seed=2)
    W = modified_metropolis(g, 2)
    x0 = uniform_initial(8, 2)
    a = simulate(W, QuantizerKind("prob", seed=4), x0, max_iters=300)
    b = simulate(W, QuantizerKind("prob", seed=4), x0, max_iters=300)
    assert [s.x for s in a.states] == [s.x for s in b.states]


def test_undecided_budget():
    g = erdos_renyi(10, 0.3, seed=0)
    tr = simulate(modified_metropolis(g, 2), T, uniform_initial(10, 0), max_iters=5)
    assert tr.verdict.kind == UNDECIDED and tr.verdict.iterations == 5
    assert not tr.terminal


def test_record_policies():
    g = erdos_renyi(10, 0.3, seed=3)
    W = modified_metropolis(g, 2)
    x0 = uniform_initial(10, 3)
    full = simulate(W, T, x0)
    thin = simulate(W, T, x0, record="every:10")
    none = simulate(W, T, x0, record="none")
    assert full.full and not thin.full and not none.full
    assert thin.indices == [0, 10, 20, 30, 40, 50, 53]
    assert [thin.state(k) for k in thin.indices] == [full.state(k) for k in thin.indices]
    assert none.raw == [] and none.x0 == full.x0
    assert none.verdict == full.verdict


def test_observer_sees_every_state():
    g = erdos_renyi(10, 0.3, seed=3)
    seen = []
    simulate(modified_metropolis(g, 2), T, uniform_initial(10, 3), record="none", observer=lambda k, u, s: seen.append(k))
    assert seen == list(range(54))


def test_forced_non_stochastic_uses_wide_integers():
    W = WeightMatrix(2, {(0, 1): F(3, 2), (1, 0): F(3, 2)}, (F(-1, 2), F(-1, 2)))
    tr = simulate(W, T, [F(0), F(1)], max_iters=60, force=True)
    assert tr.conserved
    assert isinstance(tr.raw[-1][0], int)


def test_linear_baseline():
    assert simulate_linear(metropolis(path_graph(2)), [0, 1], 1).states[1] == (F(1, 2), F(1, 2))
    g = path_graph(3)
    lt = simulate_linear(metropolis(g), [0, 0, 3], 1)
    D = dense_metropolis(3, g.edges)
    assert lt.states[1] == tuple(sum(D[i][j] * v for j, v in enumerate([0, 0, 3])) for i in range(3))
    assert lt.states[1] == (F(0), F(1), F(2))
    lt = simulate_linear(modified_metropolis(erdos_renyi(6, 0.6, seed=1), 2), [F(k) for k in range(6)], 8)
    assert set(lt.sums()) == {15}
    fl = simulate_linear(metropolis(g), [0, 0, 3], 50, exact=False)
    assert np.allclose(fl.states[-1], 1.0)


def test_naive_step_drifts():
    W = metropolis(path_graph(2))
    assert naive_quantized_step(W, T, [F(1, 2), F(3, 2)]) == [F(3, 4), F(3, 4)]
    x = [F(7), F(9)]
    assert naive_quantized_step(W, T, x) == step(W, T, x)
    y = [F(1, 3), F(8, 3)]
    for _ in range(5):
        y = naive_quantized_step(W, T, y)
    assert sum(y) / 2 != F(3, 2)


def test_trace_and_verdict_files(tmp_path):
    g = erdos_renyi(10, 0.3, seed=0)
    W = modified_metropolis(g, 2)
    tr = simulate(W, T, uniform_initial(10, 0), graph=g)
    write_trace_csv(tr, tmp_path / "t.csv")
    write_verdict_json(tr.verdict, tmp_path / "v.json")
    rows = read_trace_csv(tmp_path / "t.csv")
    assert [x for _, x in rows] == [s.x for s in tr.states]
    v = read_verdict_json(tmp_path / "v.json")
    assert (v.kind, v.t_conv, v.period) == (CYCLE, 38, 6)
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "k,i,x_num,x_den,floor_x"
    rebuilt = Trace.from_states(W, T, [x for _, x in rows], graph=g)
    assert (rebuilt.verdict.kind, rebuilt.verdict.t_conv, rebuilt.verdict.period) == (CYCLE, 38, 6)


def test_verdict_json_forms():
    c = Verdict(CONSENSUS, k0=4, level=F(7), iterations=4)
    assert c.to_json() == {"kind": "consensus", "k0": 4, "level": "7"}
    assert Verdict.from_json(c.to_json()) == c
    y = Verdict(CYCLE, t_conv=3, period=2, iterations=5)
    assert Verdict.from_json(y.to_json()) == y
