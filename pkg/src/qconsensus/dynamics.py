"""Exact evolution of the quantized averaging system and its baselines.

The quantized update is ``x(k+1) = W Q(x(k)) + x(k) - Q(x(k))``. Every
reachable state lies on a grid of spacing ``1/scale`` in unit-step coordinates
``z = x / eps``, where ``scale`` is the LCM of the weight and initial-state
denominators. The engine therefore carries ``u = scale * z`` as integers, which
is exact and lets state vectors be hashed as raw bytes for cycle detection.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .errors import AssumptionViolated, InternalInconsistency
from .numeric import format_rational, lcm_all, parse_rational, to_fraction
from .quantizer import CEILING, PROBABILISTIC, ROUNDING, TRUNCATION, QuantizerKind, quantize
from .weights import WeightMatrix, validate_assumption1

CONSENSUS = "consensus"
CYCLE = "cycle"
UNDECIDED = "undecided"

DEFAULT_MAX_ITERS = 10**6
_INT64_HEADROOM = 2**60


@dataclass(frozen=True)
class SimState:
    k: int
    x: tuple[Fraction, ...]


@dataclass(frozen=True)
class Verdict:
    kind: str
    k0: int | None = None
    level: Fraction | None = None
    t_conv: int | None = None
    period: int | None = None
    iterations: int = 0

    @property
    def terminal_start(self) -> int | None:
        """First iteration of the terminal regime (``k0`` or ``t_conv``)."""
        return self.k0 if self.kind == CONSENSUS else self.t_conv

    @property
    def decided(self) -> bool:
        return self.kind != UNDECIDED

    def to_json(self) -> dict:
        if self.kind == CONSENSUS:
            return {"kind": CONSENSUS, "k0": self.k0, "level": format_rational(self.level)}
        if self.kind == CYCLE:
            return {"kind": CYCLE, "t_conv": self.t_conv, "period": self.period}
        return {"kind": UNDECIDED, "iterations": self.iterations}

    @classmethod
    def from_json(cls, d: dict) -> "Verdict":
        if d["kind"] == CONSENSUS:
            return cls(CONSENSUS, k0=d["k0"], level=parse_rational(str(d["level"])), iterations=d["k0"])
        if d["kind"] == CYCLE:
            return cls(CYCLE, t_conv=d["t_conv"], period=d["period"], iterations=d["t_conv"] + d["period"])
        return cls(UNDECIDED, iterations=d["iterations"])


class _Engine:
    """Integer form of one quantized system; see module docstring."""

    def __init__(self, W: WeightMatrix, q: QuantizerKind, x0: Sequence):
        self.W, self.q, self.n = W, q, W.n
        z0 = [to_fraction(v) / q.step for v in x0]
        if len(z0) != W.n:
            raise ValueError(f"x0 has {len(z0)} entries, weights are {W.n}x{W.n}")
        dens = [z.denominator for z in z0]
        dens += [w.denominator for w in W.offdiag.values()]
        dens += [d.denominator for d in W.diag]
        self.scale = s = lcm_all(dens)
        u0 = [int(z * s) for z in z0]
        bound = s * (max(abs(v) for v in z0) + 3) * 4
        # states stay inside [m(0), M(0) + 1) only for nonnegative row-stochastic W
        bounded = all(w > 0 for w in W.offdiag.values()) and all(d >= 0 for d in W.diag) and all(
            W.diag[i] + sum(W.neighbor_weights(i).values()) == 1 for i in range(W.n)
        )
        self.wide = not bounded or bound >= _INT64_HEADROOM
        rows, cols, vals = [], [], []
        for (i, j), w in W.offdiag.items():
            rows.append(i), cols.append(j), vals.append(int(w * s))
        for i, d in enumerate(W.diag):
            if d != 0:
                rows.append(i), cols.append(i), vals.append(int(d * s))
        if self.wide:
            self.adj = [[] for _ in range(W.n)]
            for i, j, v in zip(rows, cols, vals):
                self.adj[i].append((j, v))
            self.u0 = np.array(u0, dtype=object)
        else:
            self.A = sparse.csr_matrix(
                (np.array(vals, dtype=np.int64), (rows, cols)), shape=(W.n, W.n), dtype=np.int64
            )
            self.u0 = np.array(u0, dtype=np.int64)

    def quantized(self, u: np.ndarray) -> np.ndarray:
        s, v = self.scale, self.q.variant
        if v == TRUNCATION:
            return u // s
        if v == CEILING:
            return -((-u) // s)
        if v == ROUNDING:
            return (2 * u + s) // (2 * s)
        lo = u // s
        rem = u - lo * s
        draws = self.q.rng.integers(s, size=self.n)
        return lo + (draws < rem).astype(lo.dtype)

    def matvec(self, qv: np.ndarray) -> np.ndarray:
        if not self.wide:
            return self.A @ qv
        out = np.empty(self.n, dtype=object)
        for i, row in enumerate(self.adj):
            out[i] = sum(v * qv[j] for j, v in row)
        return out

    def step(self, u: np.ndarray) -> np.ndarray:
        qv = self.quantized(u)
        return u + self.matvec(qv) - self.scale * qv

    def key(self, u: np.ndarray):
        return tuple(u.tolist()) if self.wide else u.tobytes()

    def at_consensus(self, u: np.ndarray) -> bool:
        if self.q.variant == PROBABILISTIC:
            # only a common integer value is a sure fixed point under random rounding
            return bool((u % self.scale == 0).all() and (u == u[0]).all())
        qv = self.quantized(u)
        return bool((qv == qv[0]).all())

    def to_fractions(self, u: np.ndarray) -> tuple[Fraction, ...]:
        st, s = self.q.step, self.scale
        return tuple(st * Fraction(int(v), s) for v in u)


@dataclass
class Trace:
    """Recorded run of the quantized system.

    ``raw`` holds integer states ``u = scale * x / step`` for the iterations in
    ``indices``. ``terminal`` always holds one full terminal period (the fixed
    point for consensus), whatever the record policy.
    """

    weights: WeightMatrix
    quantizer: QuantizerKind
    scale: int
    raw: list[np.ndarray]
    indices: list[int]
    verdict: Verdict
    terminal: list[np.ndarray] = field(default_factory=list)
    conserved: bool = True
    graph: object = None
    forced: bool = False
    instrumentation: list = field(default_factory=list)
    u0: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.weights.n

    @property
    def full(self) -> bool:
        idx = self.indices
        return bool(idx) and idx == list(range(len(idx))) and idx[-1] >= self.verdict.iterations

    def fractions(self, u) -> tuple[Fraction, ...]:
        st, s = self.quantizer.step, self.scale
        return tuple(st * Fraction(int(v), s) for v in u)

    @property
    def states(self) -> list[SimState]:
        return [SimState(k, self.fractions(u)) for k, u in zip(self.indices, self.raw)]

    def state(self, k: int) -> tuple[Fraction, ...]:
        return self.fractions(self.raw[self.indices.index(k)])

    @property
    def x0(self) -> tuple[Fraction, ...]:
        return self.fractions(self.raw[0] if self.u0 is None else self.u0)

    @property
    def x_ave(self) -> Fraction:
        return sum(self.x0, Fraction(0)) / self.n

    def terminal_states(self) -> list[tuple[Fraction, ...]]:
        return [self.fractions(u) for u in self.terminal]

    @classmethod
    def from_states(
        cls,
        W: WeightMatrix,
        q: QuantizerKind,
        states: Sequence[Sequence],
        verdict: Verdict | None = None,
        graph=None,
    ) -> "Trace":
        """Wrap an externally produced state sequence (files, hand-built traces).

        Without ``verdict`` the sequence is scanned for the first consensus
        state or exact repeat.
        """
        xs = [[to_fraction(v) / q.step for v in st] for st in states]
        s = lcm_all(v.denominator for st in xs for v in st)
        raw = [np.array([int(v * s) for v in st], dtype=object) for st in xs]
        if s * (max(abs(v) for st in xs for v in st) + 3) < _INT64_HEADROOM:
            raw = [r.astype(np.int64) for r in raw]
        eng = _Engine(W, q, [v * q.step for v in xs[0]])
        if verdict is None:
            verdict = _scan_verdict(raw, s, q, eng)
        terminal = []
        start = verdict.terminal_start
        if start is not None and start < len(raw):
            span = 1 if verdict.kind == CONSENSUS else verdict.period
            terminal = raw[start : start + span]
        return cls(W, q, s, raw, list(range(len(raw))), verdict, terminal, graph=graph)


def _scan_verdict(raw, s, q, eng) -> Verdict:
    seen = {}
    for k, u in enumerate(raw):
        qv = [quantize(q, Fraction(int(v), s) * q.step) for v in u]
        if q.deterministic and all(v == qv[0] for v in qv):
            return Verdict(CONSENSUS, k0=k, level=qv[0], iterations=k)
        key = tuple(int(v) for v in u)
        if key in seen:
            return Verdict(CYCLE, t_conv=seen[key], period=k - seen[key], iterations=k)
        seen[key] = k
    return Verdict(UNDECIDED, iterations=len(raw) - 1)


def _parse_record(record) -> int | None:
    if record in ("full", None):
        return 1
    if record in ("none", "instrumentation"):
        return None
    if isinstance(record, int):
        return record
    if isinstance(record, str) and record.startswith("every:"):
        return int(record.split(":", 1)[1])
    raise ValueError(f"unknown record policy {record!r}")


def simulate(
    W: WeightMatrix,
    q: QuantizerKind,
    x0: Sequence,
    max_iters: int = DEFAULT_MAX_ITERS,
    record="full",
    force: bool = False,
    graph=None,
    observer: Callable[[int, np.ndarray, int], None] | None = None,
) -> Trace:
    """Iterate the quantized system until quantized consensus, an exact repeat, or the budget.

    ``record`` is ``"full"``, ``"every:K"`` or ``"none"``. ``observer(k, u, scale)``
    sees every state regardless of the record policy. The run is refused when
    the weights fail the weight assumption unless ``force`` is set.
    """
    if not force:
        report = validate_assumption1(W, graph)
        if not report.satisfied:
            raise AssumptionViolated(report.describe(), report.violations)
    eng = _Engine(W, q, x0)
    every = _parse_record(record)
    u = eng.u0
    total = u.sum()
    conserved = True
    raw, indices = [], []
    seen: dict = {}
    detect_cycles = q.deterministic
    verdict = None
    k = 0
    while True:
        if every is not None and k % every == 0:
            raw.append(u), indices.append(k)
        if observer is not None:
            observer(k, u, eng.scale)
        if eng.at_consensus(u):
            level = q.step * int(eng.quantized(u)[0]) if q.deterministic else q.step * int(u[0] // eng.scale)
            verdict = Verdict(CONSENSUS, k0=k, level=Fraction(level), iterations=k)
            terminal = [u]
            break
        if detect_cycles:
            key = eng.key(u)
            first = seen.get(key)
            if first is not None:
                verdict = Verdict(CYCLE, t_conv=first, period=k - first, iterations=k)
                terminal = [u]
                for _ in range(k - first - 1):
                    terminal.append(eng.step(terminal[-1]))
                break
            seen[key] = k
        if k >= max_iters:
            verdict = Verdict(UNDECIDED, iterations=k)
            terminal = []
            break
        u = eng.step(u)
        k += 1
        if conserved and u.sum() != total:
            conserved = False
    if every is not None and indices[-1] != k:
        raw.append(u), indices.append(k)
    return Trace(W, q, eng.scale, raw, indices, verdict, terminal, conserved, graph, force, u0=eng.u0)


def step(W: WeightMatrix, q: QuantizerKind, x: Sequence) -> list[Fraction]:
    """One exact update ``x + W Q(x) - Q(x)`` evaluated entrywise on Fractions."""
    x = [to_fraction(v) for v in x]
    qx = [quantize(q, v) for v in x]
    out = []
    for i in range(W.n):
        acc = W.diag[i] * qx[i]
        for j, w in W.neighbor_weights(i).items():
            acc += w * qx[j]
        out.append(x[i] + acc - qx[i])
    return out


def naive_quantized_step(W: WeightMatrix, q: QuantizerKind, x: Sequence) -> list[Fraction]:
    """``x_i <- w_ii x_i + sum_j w_ij Q(x_j)``; does not conserve the average."""
    x = [to_fraction(v) for v in x]
    qx = [quantize(q, v) for v in x]
    return [
        W.diag[i] * x[i] + sum((w * qx[j] for j, w in W.neighbor_weights(i).items()), Fraction(0))
        for i in range(W.n)
    ]


@dataclass
class LinearTrace:
    states: list

    def sums(self) -> list:
        return [sum(s) for s in self.states]


def simulate_linear(W: WeightMatrix, x0: Sequence, iters: int, exact: bool = True) -> LinearTrace:
    """Unquantized baseline ``x(k+1) = W x(k)``.

    Exact mode keeps Fractions (denominators grow, so keep ``iters`` small);
    ``exact=False`` runs in float64 for long comparison curves.
    """
    if exact:
        x = [to_fraction(v) for v in x0]
        states = [tuple(x)]
        for _ in range(iters):
            x = [
                W.diag[i] * x[i] + sum((w * x[j] for j, w in W.neighbor_weights(i).items()), Fraction(0))
                for i in range(W.n)
            ]
            states.append(tuple(x))
        return LinearTrace(states)
    Wf = np.array([[float(v) for v in row] for row in W.dense()])
    x = np.array([float(v) for v in x0])
    states = [x]
    for _ in range(iters):
        x = Wf @ x
        states.append(x)
    return LinearTrace(states)


def write_trace_csv(trace: Trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "i", "x_num", "x_den", "floor_x"])
        for st in trace.states:
            for i, v in enumerate(st.x):
                w.writerow([st.k, i, v.numerator, v.denominator, math.floor(v)])


def read_trace_csv(path) -> list[tuple[int, tuple[Fraction, ...]]]:
    """Rows back to ``(k, x)`` pairs in iteration order."""
    by_k: dict[int, dict[int, Fraction]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            v = Fraction(int(row["x_num"]), int(row["x_den"]))
            by_k.setdefault(int(row["k"]), {})[int(row["i"])] = v
    out = []
    for k in sorted(by_k):
        entries = by_k[k]
        out.append((k, tuple(entries[i] for i in range(len(entries)))))
    return out


def write_verdict_json(verdict: Verdict, path) -> None:
    Path(path).write_text(json.dumps(verdict.to_json(), indent=2) + "\n")


def read_verdict_json(path) -> Verdict:
    return Verdict.from_json(json.loads(Path(path).read_text()))


def check_conservation(trace: Trace) -> bool:
    """Recompute every recorded state sum with Fractions; independent of ``trace.conserved``."""
    sums = {sum(st.x, Fraction(0)) for st in trace.states}
    if len(sums) > 1:
        return False
    return True


def assert_conserved(trace: Trace) -> None:
    if not check_conservation(trace):
        raise InternalInconsistency("state sum changed along the trace")
