"""Runtime monitors for the quantized system: Lyapunov function, node sets, situations.

Everything here reads a trace and never feeds back into the dynamics. The
functions taking Fraction vectors (``classify_sets``, ``lyapunov``,
``detect_situations``) are the reference definitions; :class:`Monitor` evaluates
the same quantities on whole traces with integer arrays at a common scale.

Monitors work in truncation coordinates: ceiling and rounding runs (and
non-unit steps) are mapped onto the equivalent unit-step truncation system first.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from enum import IntEnum
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .dynamics import CONSENSUS, CYCLE, UNDECIDED, Trace, Verdict
from .errors import InternalInconsistency, InvariantViolation, NotConverged
from .numeric import GridConstants, decimal_part, grid_constants, lcm_all, to_fraction
from .quantizer import truncation_map
from .weights import WeightMatrix, validate_assumption1

DEFAULT_BOUND_MAX_N = 12


class SetLabel(IntEnum):
    X1 = 1
    X2 = 2
    X3 = 3
    X4 = 4
    X5 = 5
    X6 = 6


S1, S2, S3 = "S1", "S2", "S3"


def classify_sets(x: Sequence, m: int, alpha: Sequence) -> list[SetLabel]:
    """Place each node in one of X1..X6 relative to ``m + 1`` and its margin ``alpha_i``."""
    out = []
    for i, (xi, a) in enumerate(zip(x, alpha)):
        xi, a = to_fraction(xi), to_fraction(a)
        if xi < m:
            raise InternalInconsistency(f"node {i} lies below m = {m}")
        if xi < m + 1 - a:
            out.append(SetLabel.X1)
        elif xi < m + 1:
            out.append(SetLabel.X2)
        elif xi <= m + 1 + a:
            out.append(SetLabel.X3)
        elif xi < m + 2:
            out.append(SetLabel.X4)
        elif xi < m + 2 + a:
            out.append(SetLabel.X5)
        else:
            out.append(SetLabel.X6)
    return out


def lyapunov(x: Sequence, m: int, alpha: Sequence) -> Fraction:
    """``V = sum_i max(|x_i - m - 1| - alpha_i, 0)``, the l1 distance to the target box."""
    return sum(
        (max(abs(to_fraction(xi) - m - 1) - to_fraction(a), Fraction(0)) for xi, a in zip(x, alpha)),
        Fraction(0),
    )


def _edges_of(g) -> Iterable[tuple[int, int]]:
    if isinstance(g, WeightMatrix):
        return sorted(g.support())
    if hasattr(g, "edges"):
        return g.edges
    return g


_S1_HIGH, _S1_LOW = {4, 5, 6}, {1, 2}
_S2_HIGH, _S2_LOW = {5, 6}, {3}
_S3_A, _S3_B = {1}, {3}


def detect_situations(g, labels: Sequence[int]) -> frozenset[str]:
    """Which of S1, S2, S3 occur on some edge of ``g`` (a Graph, WeightMatrix or edge list)."""
    fired = set()

    def across(a, b, lo, hi):
        return (a in lo and b in hi) or (a in hi and b in lo)

    for i, j in _edges_of(g):
        a, b = int(labels[i]), int(labels[j])
        if across(a, b, _S1_LOW, _S1_HIGH):
            fired.add(S1)
        if across(a, b, _S2_LOW, _S2_HIGH):
            fired.add(S2)
        if across(a, b, _S3_A, _S3_B):
            fired.add(S3)
    return frozenset(fired)


def consensus_certificate(x0: Sequence, alpha_max) -> bool:
    """Sufficient condition for quantized consensus: ``alpha <= frac(x_ave) <= 1 - alpha``.

    ``x0`` is in truncation coordinates. False means inconclusive, not "will cycle".
    """
    x0 = [to_fraction(v) for v in x0]
    frac = decimal_part(sum(x0, Fraction(0)) / len(x0))
    a = to_fraction(alpha_max)
    return a <= frac <= 1 - a


@dataclass
class IterationReport:
    k: int
    m: int
    M: int
    V: Fraction
    counts: tuple[int, ...]
    situations: frozenset[str]
    deltaV: Fraction | None = None
    grad: Fraction | None = None

    def csv_row(self) -> list:
        return [
            self.k,
            self.m,
            self.M,
            self.V.numerator,
            self.V.denominator,
            *self.counts,
            int(S1 in self.situations),
            int(S2 in self.situations),
            int(S3 in self.situations),
        ]


INSTRUMENTATION_HEADER = ["k", "m", "M", "V_num", "V_den"] + [f"n_X{i}" for i in range(1, 7)] + ["S1", "S2", "S3"]


@dataclass
class Violation:
    rule: str
    k: int | None
    detail: str = ""


@dataclass
class LemmaReport:
    applicable: bool
    reason: str = ""
    violations: list[Violation] = field(default_factory=list)
    checks: dict[str, int] = field(default_factory=dict)
    r_measurements: list[tuple[int, int]] = field(default_factory=list)
    drop_wait_bound: Fraction | None = None
    constants: GridConstants | None = None

    @property
    def ok(self) -> bool:
        return self.applicable and not self.violations

    @property
    def first(self) -> Violation | None:
        return min(self.violations, key=lambda v: (v.k is None, v.k or 0), default=None)

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}


class Monitor:
    """Integer-scaled evaluation of the proof quantities along one trajectory.

    Feed states with :meth:`observe` (directly as a ``simulate`` observer, or
    from a recorded trace); the monitor keeps per-iteration summaries and the
    label vectors, then :meth:`report` checks the lemmas over them.
    """

    def __init__(self, W: WeightMatrix, quantizer, x0: Sequence, graph=None):
        self.W, self.n = W, W.n
        self.inv = truncation_map(quantizer)
        self.step = quantizer.step
        y0 = self.inv.forward(x0)
        self.gc = grid_constants(W, y0)
        self.graph = graph
        edges = sorted(W.support()) if graph is None else list(graph.edges)
        self.eu = np.array([e[0] for e in edges], dtype=np.int64)
        self.ev = np.array([e[1] for e in edges], dtype=np.int64)
        self.rowsum = [sum(W.neighbor_weights(i).values(), Fraction(0)) for i in range(self.n)]
        dens = [a.denominator for a in self.gc.alpha] + [self.gc.gamma.denominator]
        dens += [r.denominator for r in self.rowsum] + [y.denominator for y in y0] + list(self.gc.B)
        self.S = lcm_all(dens)
        self._wide = self.S * (max(abs(y) for y in y0) + 4) * 4 * self.n >= 2**60
        dt = object if self._wide else np.int64
        self.A = np.array([int(a * self.S) for a in self.gc.alpha], dtype=dt)
        self.SW = np.array([int(r * self.S) for r in self.rowsum], dtype=dt)
        self.G2 = int(2 * self.gc.gamma * self.S)
        self.Bstep = np.array([self.S // b for b in self.gc.B], dtype=dt)
        self.Y: list[np.ndarray] = []
        self.m: list[int] = []
        self.M: list[int] = []
        self.V: list[int] = []
        self.labels: list[np.ndarray] = []
        self.situations: list[frozenset] = []
        self.ks: list[int] = []

    # conversions ---------------------------------------------------------
    def from_engine(self, u: np.ndarray, scale: int) -> np.ndarray:
        """Engine integers (``scale * x / step``) to ``S * y`` in truncation coordinates."""
        factor, rem = divmod(self.S, scale)
        if rem:
            raise InternalInconsistency("monitor scale is not a multiple of the trace scale")
        dt = object if self._wide else np.int64
        u = np.asarray(u).astype(dt)
        return self.inv.sign * u * factor + int(self.inv.shift * self.S)

    def from_fractions(self, x: Sequence) -> np.ndarray:
        y = self.inv.forward(x)
        vals = [y_i * self.S for y_i in y]
        if any(v.denominator != 1 for v in vals):
            raise InternalInconsistency("state is off the monitor grid")
        return np.array([int(v) for v in vals], dtype=object if self._wide else np.int64)

    # per-state quantities -------------------------------------------------
    def _labels(self, Y: np.ndarray, m: int) -> np.ndarray:
        S, A = self.S, self.A
        base = S * (m + 1)
        lab = np.full(self.n, 6, dtype=np.int8)
        lab[Y < base + S + A] = 5
        lab[Y < base + S] = 4
        lab[Y <= base + A] = 3
        lab[Y < base] = 2
        lab[Y < base - A] = 1
        return lab

    def _v(self, Y: np.ndarray, m: int) -> int:
        d = np.abs(Y - self.S * (m + 1)) - self.A
        return int(d[d > 0].sum()) if (d > 0).any() else 0

    def _situations(self, lab: np.ndarray) -> frozenset:
        a, b = lab[self.eu], lab[self.ev]
        fired = set()
        lo_a, lo_b = a <= 2, b <= 2
        if ((lo_a & (b >= 4)) | (lo_b & (a >= 4))).any():
            fired.add(S1)
        if (((a == 3) & (b >= 5)) | ((b == 3) & (a >= 5))).any():
            fired.add(S2)
        if (((a == 1) & (b == 3)) | ((b == 1) & (a == 3))).any():
            fired.add(S3)
        return frozenset(fired)

    def observe(self, k: int, u: np.ndarray, scale: int) -> None:
        self.push(k, self.from_engine(u, scale))

    def push(self, k: int, Y: np.ndarray) -> None:
        S = self.S
        fl = Y // S
        m, M = int(fl.min()), int(fl.max())
        lab = self._labels(Y, m)
        self.ks.append(k)
        self.Y.append(Y)
        self.m.append(m)
        self.M.append(M)
        self.V.append(self._v(Y, m))
        self.labels.append(lab)
        self.situations.append(self._situations(lab))

    def frac(self, v: int) -> Fraction:
        return Fraction(v, self.S)

    def iteration_reports(self) -> list[IterationReport]:
        out = []
        for t in range(len(self.ks)):
            counts = tuple(int((self.labels[t] == s).sum()) for s in range(1, 7))
            dV = grad = None
            if t + 1 < len(self.ks):
                dV = self.frac(self.V[t + 1] - self.V[t])
                grad = self.frac(self._v(self.Y[t + 1], self.m[t]) - self.V[t])
            out.append(
                IterationReport(
                    self.ks[t], self.m[t], self.M[t], self.frac(self.V[t]), counts, self.situations[t], dV, grad
                )
            )
        return out

    # lemma checks ---------------------------------------------------------
    def report(
        self,
        verdict: Verdict,
        terminal: Sequence[np.ndarray] | None = None,
        bound_max_n: int = DEFAULT_BOUND_MAX_N,
        force_bounds: bool = False,
        max_violations: int = 50,
    ) -> LemmaReport:
        """Check every proven invariant over the observed states.

        ``terminal`` holds one terminal period in monitor integers (``S * y``).
        """
        rep = LemmaReport(applicable=True, constants=self.gc)
        n, S, gc = self.n, self.S, self.gc
        K = len(self.ks)
        beta_S = int(gc.beta * S)
        checks = rep.checks

        def bad(rule, k, detail=""):
            checks[rule] = checks.get(rule, 0)
            if len(rep.violations) < max_violations:
                rep.violations.append(Violation(rule, k, detail))

        def ok(rule):
            checks[rule] = checks.get(rule, 0) + 1

        if 2 * gc.gamma > Fraction(1, 2) - max(self.rowsum):
            bad("gamma_slack", None, "1/2 - sum_j w_ij < 2 gamma")
        Y0 = self.Y[0]
        total = Y0.sum()
        grads = []
        for t in range(K):
            Y, m, lab = self.Y[t], self.m[t], self.labels[t]
            k = self.ks[t]
            base = S * (m + 1)
            if Y.sum() != total:
                bad("conservation", k)
            else:
                ok("conservation")
            if ((Y - Y0) % self.Bstep != 0).any():
                bad("grid", k, "decimal part left the 1/B_i grid")
            else:
                ok("grid")
            c = Y - (Y // S) * S
            cbar = S - c
            g_ok = True
            hi = c > self.SW
            if (c[hi] - self.SW[hi] < self.G2).any():
                g_ok = False
            hi = cbar > self.SW
            if (cbar[hi] - self.SW[hi] < self.G2).any():
                g_ok = False
            if (cbar < self.G2).any():
                g_ok = False
            if g_ok:
                ok("gamma_margins")
            else:
                bad("gamma_margins", k)
            if (np.abs(Y - base) == self.A).any():
                bad("boundary", k, "node on the boundary of the target box")
            else:
                ok("boundary")
            if t + 1 == K:
                break
            Yn, mn, labn = self.Y[t + 1], self.m[t + 1], self.labels[t + 1]
            if mn < m:
                bad("monotone_m", k, f"m fell from {m} to {mn}")
            else:
                ok("monotone_m")
            if self.M[t + 1] > self.M[t]:
                bad("monotone_M", k, f"M rose from {self.M[t]} to {self.M[t + 1]}")
            else:
                ok("monotone_M")
            for rule, lo in (("absorb_X6", 6), ("absorb_X56", 5), ("absorb_X456", 4)):
                if not (lab >= lo).any():
                    if (labn >= lo).any():
                        bad(rule, k + 1, f"set X{lo}+ re-populated")
                    else:
                        ok(rule)
            grad = self._v(Yn, m) - self.V[t]
            grads.append(grad)
            if mn == m:
                if ((lab != 1) & (labn == 1)).any():
                    bad("reenter_X1", k + 1, "node re-entered X1")
                else:
                    ok("reenter_X1")
                if self.V[t + 1] > self.V[t]:
                    bad("lyapunov_rise", k, f"V rose by {self.frac(self.V[t + 1] - self.V[t])}")
                else:
                    ok("lyapunov_rise")
            sit = self.situations[t]
            if S1 in sit or S2 in sit:
                if grad > -beta_S:
                    bad("situation_drop", k, f"S1/S2 fired but grad V = {self.frac(grad)}")
                else:
                    ok("situation_drop")
            if S3 in sit and not (lab >= 4).any():
                if grad > -beta_S:
                    bad("s3_drop", k, f"S3 fired but grad V = {self.frac(grad)}")
                else:
                    ok("s3_drop")

        self._check_bounds(rep, grads, beta_S, bound_max_n, force_bounds, bad, ok)
        self._check_terminal(rep, verdict, terminal, bad, ok)
        return rep

    def _check_bounds(self, rep, grads, beta_S, bound_max_n, force_bounds, bad, ok):
        n, K = self.n, len(self.ks)
        if n > bound_max_n and not force_bounds:
            return
        gc = self.gc
        base = 1 + 1 / (2 * gc.delta)
        growth = base ** (n - 1)
        wait_bound = n * growth
        rep.drop_wait_bound = wait_bound
        drops = [t for t, g in enumerate(grads) if g <= -beta_S]
        high = [bool((lab >= 4).any()) for lab in self.labels]
        # m_run_end[t]: last index with the same m as t
        m_run_end = [0] * K
        for t in range(K - 1, -1, -1):
            m_run_end[t] = t if t == K - 1 or self.m[t + 1] != self.m[t] else m_run_end[t + 1]
        for t in range(K):
            if not high[t]:
                continue
            i = bisect.bisect_right(drops, t)
            if i < len(drops) and drops[i] <= m_run_end[t]:
                R = drops[i] - t
                rep.r_measurements.append((self.ks[t], R))
                if R > wait_bound:
                    bad("drop_wait", self.ks[t], f"R = {R} exceeds {wait_bound}")
                else:
                    ok("drop_wait")
            elif m_run_end[t] == K - 1 and (K - 1 - t) > wait_bound:
                bad("drop_wait", self.ks[t], "no strict drop within the bound")
        # k1: first index >= t with {X4,X5,X6} empty or m above m(t)
        nxt = [None] * K
        for t in range(K - 1, -1, -1):
            if not high[t]:
                nxt[t] = t
            elif t + 1 < K:
                nxt[t] = nxt[t + 1]
        beta = gc.beta
        for t in range(K):
            k1 = nxt[t]
            r = m_run_end[t] + 1
            if r < K and (k1 is None or r < k1):
                k1 = r
            if k1 is None:
                continue
            phase_bound = n * (self.frac(self.V[t]) / beta + 1) * growth
            if k1 - t > phase_bound:
                bad("phase_length", self.ks[t], f"k1 - k0 = {k1 - t} exceeds {phase_bound}")
            else:
                ok("phase_length")

    def _check_terminal(self, rep, verdict, terminal, bad, ok):
        if verdict.kind == UNDECIDED:
            bad("dichotomy", verdict.iterations, "no verdict within the iteration budget")
            return
        if not terminal:
            return
        S = self.S
        total = self.Y[0].sum()
        n = self.n
        alpha_max = max(self.gc.alpha)
        k_start = verdict.terminal_start
        for off, Y in enumerate(terminal):
            k = k_start + off
            fl = Y // S
            m = int(fl.min())
            lab = self._labels(Y, m)
            v = self._v(Y, m)
            dev = np.abs(n * Y - total)  # n * S * |y_i - y_ave|
            if verdict.kind == CYCLE:
                if not set(np.unique(lab).tolist()) <= {2, 3}:
                    bad("terminal_sets", k, "cycle state outside X2 u X3")
                else:
                    ok("terminal_sets")
                if v != 0:
                    bad("terminal_V", k, f"V = {self.frac(v)} in the cycle")
                else:
                    ok("terminal_V")
                if (dev > 2 * alpha_max * n * S).any():
                    bad("cycle_deviation", k, "|x_i - x_ave| > 2 alpha")
                else:
                    ok("cycle_deviation")
                A = self.A
                spread = np.abs(Y[:, None] - Y[None, :]) > A[:, None] + A[None, :]
                if spread.any():
                    bad("cycle_pairs", k, "|x_i - x_j| > alpha_i + alpha_j")
                else:
                    ok("cycle_pairs")
            else:
                if not set(np.unique(lab).tolist()) <= {1, 2}:
                    bad("terminal_sets", k, "consensus state outside X1 u X2")
                else:
                    ok("terminal_sets")
                if (fl != fl[0]).any() or (dev >= n * S).any():
                    bad("consensus_spread", k, "floors differ or |x_i - x_ave| >= 1")
                else:
                    ok("consensus_spread")
        if verdict.kind == CONSENSUS:
            # the fixed point keeps V constant from k0 on
            vals = {self.V[t] for t, k in enumerate(self.ks) if k >= k_start}
            if len(vals) > 1:
                bad("terminal_V", k_start, "V changes after quantized consensus")
            else:
                ok("terminal_V")


def _applicable(trace: Trace) -> str:
    if not trace.quantizer.deterministic:
        return "probabilistic quantizer has no deterministic invariants"
    rep = validate_assumption1(trace.weights, trace.graph)
    if not rep.satisfied:
        return f"weight assumption fails: {rep.describe()}"
    if not trace.full:
        return "trace is thinned; the monitors need every iteration"
    return ""


def monitor_trace(trace: Trace) -> Monitor:
    mon = Monitor(trace.weights, trace.quantizer, trace.x0, trace.graph)
    for k, u in zip(trace.indices, trace.raw):
        mon.observe(k, u, trace.scale)
    return mon


def check_lemmas(
    trace: Trace,
    bound_max_n: int = DEFAULT_BOUND_MAX_N,
    force_bounds: bool = False,
) -> LemmaReport:
    """Run every monitor over a full trace and report violations.

    Traces whose weights fail the weight assumption are marked not applicable.
    The exponential waiting-time bounds are only evaluated for
    ``n <= bound_max_n`` unless ``force_bounds``.
    """
    why = _applicable(trace)
    if why:
        return LemmaReport(applicable=False, reason=why)
    mon = monitor_trace(trace)
    terminal = [mon.from_engine(u, trace.scale) for u in trace.terminal]
    return mon.report(trace.verdict, terminal, bound_max_n, force_bounds)


def instrument(trace: Trace) -> list[IterationReport]:
    """Per-iteration m, M, V, set sizes and situations for a full trace."""
    why = _applicable(trace)
    if why:
        raise InvariantViolation(f"cannot instrument: {why}")
    reps = monitor_trace(trace).iteration_reports()
    trace.instrumentation = reps
    return reps


def write_instrumentation_csv(reports: Sequence[IterationReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(INSTRUMENTATION_HEADER)
        for r in reports:
            w.writerow(r.csv_row())


@dataclass(frozen=True)
class DInfinity:
    squared: Fraction
    decimal: str
    certified: bool = True

    @property
    def value(self) -> float:
        return math.sqrt(self.squared)


def _sqrt_decimal(q: Fraction, digits: int = 30) -> str:
    with localcontext() as ctx:
        ctx.prec = digits
        return str((Decimal(q.numerator) / Decimal(q.denominator)).sqrt())


def d_infinity(trace: Trace) -> DInfinity:
    """Terminal deviation ``max over one period of ||x - x_ave 1|| / sqrt(n)``.

    Returned exactly as its square, plus a decimal rendering of the root.
    """
    if not trace.verdict.decided or not trace.terminal:
        raise NotConverged("d_infinity needs a consensus or cycle verdict")
    n = trace.n
    ave = trace.x_ave
    best = Fraction(0)
    for x in trace.terminal_states():
        val = sum(((v - ave) ** 2 for v in x), Fraction(0)) / n
        best = max(best, val)
    return DInfinity(best, _sqrt_decimal(best))


def terminal_deviation(trace: Trace) -> Fraction:
    """``max_i |x_i - x_ave|`` over the terminal period."""
    if not trace.verdict.decided or not trace.terminal:
        raise NotConverged("terminal deviation needs a consensus or cycle verdict")
    ave = trace.x_ave
    return max(abs(v - ave) for x in trace.terminal_states() for v in x)


@dataclass
class RunningAverage:
    k: int
    y: tuple[Fraction, ...]


@dataclass
class RunningAverageResult:
    sequence: list[RunningAverage]
    limit: tuple[Fraction, ...]
    max_deviation: Fraction


def running_average(trace: Trace, keep_sequence: bool = True) -> RunningAverageResult:
    """Per-node running means ``y_i(k) = k/(k+1) y_i(k-1) + x_i(k)/(k+1)`` and their limit.

    The limit is the exact mean over one terminal period. Raises
    :class:`InvariantViolation` if it lies farther than 1 from the initial average.
    """
    if not trace.verdict.decided or not trace.terminal:
        raise NotConverged("running average limit needs a consensus or cycle verdict")
    seq = []
    if keep_sequence:
        if not trace.full:
            raise InvariantViolation("running average sequence needs a full trace")
        y = None
        for st in trace.states:
            k = st.k
            if y is None:
                y = st.x
            else:
                y = tuple(Fraction(k, k + 1) * a + b / (k + 1) for a, b in zip(y, st.x))
            seq.append(RunningAverage(k, y))
    period = trace.terminal_states()
    P = len(period)
    limit = tuple(sum((x[i] for x in period), Fraction(0)) / P for i in range(trace.n))
    ave = trace.x_ave
    dev = max(abs(v - ave) for v in limit)
    if dev > 1:
        raise InvariantViolation(f"running average limit deviates by {dev} > 1")
    return RunningAverageResult(seq, limit, dev)


def alpha_max_for(W: WeightMatrix, x0_trunc: Sequence) -> Fraction:
    return grid_constants(W, x0_trunc).alpha_max
