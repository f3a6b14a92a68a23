"""Batch runs: convergence-time sweeps over connectivity, weight-design sweeps, invariant suites.

A run is fully determined by ``(config, seed)``. The graph draws from
``SeedSequence([seed, attempt])``, initial values from a spawned child of
``seed`` and the probabilistic quantizer from ``default_rng(seed)``, so the
three streams never overlap. Runs can be spread over worker processes;
results are always collected in seed order, so aggregates are bit-identical
whatever the worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis
from .dynamics import CONSENSUS, CYCLE, DEFAULT_MAX_ITERS, UNDECIDED, simulate
from .errors import ParameterOutOfRange, QConsensusError
from .graph import complete_bipartite_regular, erdos_renyi, path_graph, random_geometric, read_edge_list
from .numeric import format_rational, parse_rational, to_fraction
from .quantizer import QuantizerKind, reduce_to_truncation
from .weights import metropolis, modified_metropolis, read_weights, two_node_cyclic, uniform_bipartite

log = logging.getLogger(__name__)

FAMILIES = ("er", "rgg", "path", "bipartite", "file")
SCHEMES = ("metropolis", "modified", "two_node", "file")
RECIPES = ("uniform", "forced", "explicit")


@dataclass(frozen=True)
class ExperimentConfig:
    """One batch of runs. Every field can be set from a flat ``key = value`` file."""

    family: str = "er"
    n: int = 10
    p: Fraction = Fraction(3, 10)
    c: Fraction | None = Fraction(2)
    radius: Fraction | None = None
    graph_file: str | None = None
    weights: str = "modified"
    C: Fraction = Fraction(2)
    w: Fraction = Fraction(1, 25)
    self_weight: Fraction = Fraction(3, 4)
    weights_file: str | None = None
    quantizer: str = "trunc"
    step: Fraction = Fraction(1)
    init: str = "uniform"
    lo: Fraction = Fraction(0)
    hi: Fraction = Fraction(100)
    denominator: int = 100
    target: Fraction = Fraction(1, 2)
    x0: tuple[Fraction, ...] = ()
    runs: int = 20
    seed: int = 0
    max_iters: int = DEFAULT_MAX_ITERS
    force: bool = False
    check: bool = False
    trace_sample: int = 0
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterOutOfRange(f"unknown graph family {self.family!r}")
        if self.weights not in SCHEMES:
            raise ParameterOutOfRange(f"unknown weight scheme {self.weights!r}")
        if self.init not in RECIPES:
            raise ParameterOutOfRange(f"unknown initial recipe {self.init!r}")
        if self.runs < 1:
            raise ParameterOutOfRange("runs must be >= 1")
        if self.n < 2:
            raise ParameterOutOfRange("n must be >= 2")
        if self.denominator < 1:
            raise ParameterOutOfRange("denominator must be >= 1")
        if self.hi < self.lo:
            raise ParameterOutOfRange("hi must be >= lo")
        if self.init == "explicit" and len(self.x0) != self.n:
            raise ParameterOutOfRange("explicit x0 must have n entries")
        if self.family == "file" and not self.graph_file:
            raise ParameterOutOfRange("family=file needs graph_file")
        if self.weights == "file" and not self.weights_file:
            raise ParameterOutOfRange("weights=file needs weights_file")

    @property
    def seeds(self) -> range:
        return range(self.seed, self.seed + self.runs)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES[key]
    if value.lower() in ("none", ""):
        return None
    if kind == "int":
        return int(value)
    if kind == "bool":
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: not a boolean: {value!r}")
        return value.lower() in ("true", "1", "yes")
    if kind.startswith("Fraction"):
        return parse_rational(value)
    if kind.startswith("tuple"):
        return tuple(parse_rational(v) for v in value.split(","))
    return value


CONFIG_KEYS = tuple(_FIELD_TYPES) + ("sweep", "values")


def parse_config(text: str) -> tuple[ExperimentConfig, str | None, list]:
    """Parse a flat config: one ``key = value`` per line, ``#`` starts a comment.

    The optional ``sweep``/``values`` keys name a field and the comma-separated
    values it takes. Returns ``(config, sweep_key, values)``.
    """
    kw = {}
    sweep, values = None, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "sweep":
            sweep = value
        elif key == "values":
            values = [v.strip() for v in value.split(",")]
        elif key in _FIELD_TYPES:
            kw[key] = _coerce(key, value)
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    if sweep is not None:
        if sweep not in _FIELD_TYPES:
            raise ValueError(f"cannot sweep unknown key {sweep!r}")
        if not values:
            raise ValueError("sweep needs values")
        values = [_coerce(sweep, v) for v in values]
    return ExperimentConfig(**kw), sweep, values


def load_config(path) -> tuple[ExperimentConfig, str | None, list]:
    return parse_config(Path(path).read_text())


# building blocks ---------------------------------------------------------


def _init_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))


def uniform_initial(n: int, seed: int, lo=0, hi=100, denominator: int = 100) -> list[Fraction]:
    """``n`` values drawn uniformly from the grid ``{lo, lo + 1/den, ..., hi}``."""
    lo, hi = to_fraction(lo), to_fraction(hi)
    a, b = math.ceil(lo * denominator), math.floor(hi * denominator)
    draws = _init_rng(seed).integers(a, b + 1, size=n)
    return [Fraction(int(v), denominator) for v in draws]


def forced_initial(n: int, seed: int, target=Fraction(1, 2), lo=0, hi=100, denominator: int = 100) -> list[Fraction]:
    """Uniform values for ``n - 1`` nodes; the last one fixes ``frac(x_ave) = target``.

    The last value is the one closest to the others' mean that meets the target.
    """
    target = to_fraction(target)
    if not 0 <= target < 1:
        raise ParameterOutOfRange("target fractional part must lie in [0, 1)")
    head = uniform_initial(n - 1, seed, lo, hi, denominator)
    s = sum(head, Fraction(0))
    mu = s / (n - 1)
    # x_last = n (t + target) - s; pick the integer t putting it nearest mu
    t = round((mu + s) / n - target)
    return head + [n * (t + target) - s]


def build_graph(cfg: ExperimentConfig, seed: int):
    if cfg.family == "er":
        return erdos_renyi(cfg.n, float(cfg.p), seed)
    if cfg.family == "rgg":
        radius = None if cfg.radius is None else float(cfg.radius)
        c = None if cfg.c is None else float(cfg.c)
        return random_geometric(cfg.n, c=c, seed=seed, radius=radius)[0]
    if cfg.family == "path":
        return path_graph(cfg.n)
    if cfg.family == "bipartite":
        if cfg.n % 2:
            raise ParameterOutOfRange("bipartite family needs even n")
        return complete_bipartite_regular(cfg.n // 2, cfg.n // 2)
    g = read_edge_list(cfg.graph_file)
    if g.n != cfg.n:
        raise ParameterOutOfRange(f"graph file has {g.n} nodes, config says {cfg.n}")
    return g


def build_weights(cfg: ExperimentConfig, g):
    if cfg.weights == "metropolis":
        return metropolis(g)
    if cfg.weights == "modified":
        return modified_metropolis(g, cfg.C)
    if cfg.weights == "two_node":
        if g.n != 2:
            raise ParameterOutOfRange("two_node weights need n = 2")
        return two_node_cyclic(cfg.w)
    if cfg.weights == "file":
        return read_weights(cfg.weights_file)
    raise ParameterOutOfRange(cfg.weights)


def build_initial(cfg: ExperimentConfig, seed: int) -> list[Fraction]:
    if cfg.init == "explicit":
        return list(cfg.x0)
    if cfg.init == "forced":
        return forced_initial(cfg.n, seed, cfg.target, cfg.lo, cfg.hi, cfg.denominator)
    return uniform_initial(cfg.n, seed, cfg.lo, cfg.hi, cfg.denominator)


# single runs ---------------------------------------------------------------


@dataclass
class RunRecord:
    seed: int
    verdict: str
    t_conv: int | None = None
    period: int | None = None
    iterations: int = 0
    x_ave: str = ""
    d_inf_sq: str | None = None
    d_inf: float | None = None
    deviation: str | None = None
    certificate: bool | None = None
    alpha_max: str | None = None
    conserved: bool = True
    violations: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def decided(self) -> bool:
        return self.verdict in (CONSENSUS, CYCLE)

    def to_json(self) -> dict:
        return asdict(self)


def _run_one(cfg: ExperimentConfig, seed: int, trace_dir: str | None = None) -> RunRecord:
    try:
        g = build_graph(cfg, seed)
        W = build_weights(cfg, g)
        x0 = build_initial(cfg, seed)
        q = QuantizerKind(cfg.quantizer, cfg.step, seed=seed)
        need_full = cfg.check or trace_dir is not None
        tr = simulate(W, q, x0, cfg.max_iters, record="full" if need_full else "none", force=cfg.force, graph=g)
    except QConsensusError as exc:
        return RunRecord(seed, "failed", error=f"{type(exc).__name__}: {exc}")
    except ValueError as exc:
        return RunRecord(seed, "failed", error=f"{type(exc).__name__}: {exc}")
    v = tr.verdict
    rec = RunRecord(seed, v.kind, v.terminal_start, v.period, v.iterations, format_rational(tr.x_ave))
    rec.conserved = tr.conserved
    if q.deterministic:
        y0, _ = reduce_to_truncation(q, x0)
        try:
            a = analysis.alpha_max_for(W, y0)
            rec.alpha_max = format_rational(a)
            rec.certificate = analysis.consensus_certificate(y0, a)
        except ValueError:
            pass
    if v.decided:
        d = analysis.d_infinity(tr)
        rec.d_inf_sq, rec.d_inf = format_rational(d.squared), d.value
        rec.deviation = format_rational(analysis.terminal_deviation(tr))
    if cfg.check:
        rep = analysis.check_lemmas(tr)
        if rep.applicable:
            rec.violations = [f"{x.rule}@{x.k}" for x in rep.violations]
    if trace_dir is not None and q.deterministic and tr.full:
        try:
            reps = analysis.instrument(tr)
        except QConsensusError:
            reps = None
        if reps is not None:
            analysis.write_instrumentation_csv(reps, Path(trace_dir) / f"{seed}.csv")
    return rec


def run_single(cfg: ExperimentConfig, seed: int) -> RunRecord:
    return _run_one(cfg, seed)


# aggregation ---------------------------------------------------------------


@dataclass
class Cell:
    param: str | None
    value: object
    records: list[RunRecord]

    @property
    def runs(self) -> int:
        return len(self.records)

    def count(self, kind: str) -> int:
        return sum(r.verdict == kind for r in self.records)

    @property
    def failed(self) -> int:
        return sum(r.verdict == "failed" for r in self.records)

    @property
    def mean_tconv(self) -> Fraction | None:
        ts = [r.t_conv for r in self.records if r.decided]
        return Fraction(sum(ts), len(ts)) if ts else None

    @property
    def mean_dinf(self) -> float | None:
        ds = [r.d_inf for r in self.records if r.d_inf is not None]
        return math.fsum(ds) / len(ds) if ds else None

    @property
    def max_deviation(self) -> Fraction | None:
        ds = [parse_rational(r.deviation) for r in self.records if r.deviation is not None]
        return max(ds) if ds else None

    def row(self) -> list:
        mt, md, dev = self.mean_tconv, self.mean_dinf, self.max_deviation
        return [
            self.param or "",
            "" if self.value is None else _fmt(self.value),
            self.runs,
            "" if mt is None else f"{float(mt):.6f}",
            self.count(CONSENSUS),
            self.count(CYCLE),
            self.count(UNDECIDED),
            self.failed,
            "" if md is None else f"{md:.6f}",
            "" if dev is None else format_rational(dev),
        ]


SWEEP_HEADER = ["param", "value", "runs", "mean_tconv", "consensus", "cycle", "undecided", "failed", "mean_dinf", "max_deviation"]


@dataclass
class SweepResult:
    cells: list[Cell]

    def means(self) -> list[Fraction | None]:
        return [c.mean_tconv for c in self.cells]

    def strictly_decreasing(self) -> bool:
        m = self.means()
        return None not in m and all(a > b for a, b in zip(m, m[1:]))

    def non_decreasing(self) -> bool:
        m = self.means()
        return None not in m and all(a <= b for a, b in zip(m, m[1:]))


def _fmt(v) -> str:
    if isinstance(v, Fraction):
        return format_rational(v)
    return str(v)


def _cell_dir(out: Path, param, value) -> Path:
    return out if param is None else out / f"{param}={_fmt(value).replace('/', '_')}"


def _execute(cfg: ExperimentConfig, out: Path | None) -> list[RunRecord]:
    seeds = list(cfg.seeds)
    trace_dirs = [None] * len(seeds)
    if out is not None:
        (out / "runs").mkdir(parents=True, exist_ok=True)
        if cfg.trace_sample > 0:
            (out / "traces").mkdir(exist_ok=True)
            for i in range(min(cfg.trace_sample, len(seeds))):
                trace_dirs[i] = str(out / "traces")
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_run_one, [cfg] * len(seeds), seeds, trace_dirs))
    else:
        records = [_run_one(cfg, s, d) for s, d in zip(seeds, trace_dirs)]
    for r in records:
        if r.error:
            log.warning("seed %d failed: %s", r.seed, r.error)
        if out is not None:
            (out / "runs" / f"{r.seed}.json").write_text(json.dumps(r.to_json(), indent=1) + "\n")
    return records


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for c in result.cells:
            w.writerow(c.row())


def run_experiment(cfg: ExperimentConfig, sweep: str | None = None, values: Sequence = ()) -> SweepResult:
    """Run ``cfg`` once, or once per value of the swept field.

    With ``cfg.out`` set, writes ``sweep.csv``, ``runs/<seed>.json`` and (for
    the first ``trace_sample`` seeds) ``traces/<seed>.csv``; swept cells get a
    ``<key>=<value>`` subdirectory each.
    """
    out = Path(cfg.out) if cfg.out else None
    if sweep is None:
        plan = [(None, None, cfg)]
    else:
        plan = [(sweep, v, replace(cfg, **{sweep: v})) for v in values]
    cells = []
    for param, value, c in plan:
        log.info("running %s=%s: %d runs", param, value, c.runs)
        cell_out = None if out is None else _cell_dir(out, param, value)
        cells.append(Cell(param, value, _execute(c, cell_out)))
    result = SweepResult(cells)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(result, out / "sweep.csv")
    return result


@dataclass
class CSweepCell:
    C: Fraction
    max_deviation: Fraction | None
    mean_tconv: Fraction | None

    @property
    def within_bound(self) -> bool:
        return self.max_deviation is not None and self.max_deviation <= 2 / self.C


def sweep_C(cfg: ExperimentConfig, Cs: Sequence) -> tuple[SweepResult, list[CSweepCell]]:
    """Weight-design sweep: terminal error against ``2/C`` and the convergence cost."""
    Cs = [to_fraction(C) for C in Cs]
    if any(C < 2 for C in Cs):
        raise ParameterOutOfRange("C values must be >= 2")
    res = run_experiment(replace(cfg, weights="modified"), "C", Cs)
    summary = [CSweepCell(c.value, c.max_deviation, c.mean_tconv) for c in res.cells]
    return res, summary


# presets ---------------------------------------------------------------------

# desk-scale radius constants and edge probabilities for n = 30
RGG_C_DESK = (Fraction(1), Fraction(2), Fraction(4))
ER_P_DESK = (Fraction(1, 10), Fraction(2, 10), Fraction(3, 10))
# the full-scale grid at n = 100
RGG_RADII_FULL = tuple(parse_rational(r) for r in ("0.1357", "0.1517", "0.1858", "0.2146", "0.3717"))
ER_P_FULL = tuple(parse_rational(p) for p in ("0.04", "0.06", "0.08", "0.10"))
C_SWEEP = (Fraction(2), Fraction(5), Fraction(10))


def preset(name: str, full: bool = False, **overrides) -> tuple[ExperimentConfig, str, list]:
    """Named studies: ``rgg-trend``, ``er-trend``, ``c-sweep``."""
    n, runs = (100, 100) if full else (30, 50)
    base = dict(n=n, runs=runs, init="forced", target=Fraction(1, 2), weights="modified", C=Fraction(2))
    if name == "rgg-trend":
        if full:
            cfg, key, vals = dict(base, family="rgg", c=None), "radius", list(RGG_RADII_FULL)
        else:
            cfg, key, vals = dict(base, family="rgg"), "c", list(RGG_C_DESK)
    elif name == "er-trend":
        cfg, key, vals = dict(base, family="er"), "p", list(ER_P_FULL if full else ER_P_DESK)
    elif name == "c-sweep":
        cfg = dict(base, family="er", p=Fraction(3, 10), target=Fraction(0), runs=50 if full else 30)
        if not full:
            cfg["n"] = 10
        key, vals = "C", list(C_SWEEP)
    else:
        raise ParameterOutOfRange(f"unknown preset {name!r}")
    cfg.update(overrides)
    return ExperimentConfig(**cfg), key, vals


PRESETS = ("rgg-trend", "er-trend", "c-sweep")


# invariant suite -----------------------------------------------------------


@dataclass
class VerifyResult:
    runs: int = 0
    failures: list[str] = field(default_factory=list)
    verdicts: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def verify_trace(tr, label: str, out: VerifyResult) -> None:
    """Every exact property a single Assumption-1 trace must satisfy."""
    out.runs += 1
    v = tr.verdict
    out.verdicts[v.kind] = out.verdicts.get(v.kind, 0) + 1
    if not tr.conserved:
        out.failures.append(f"{label}: sum not conserved")
    rep = analysis.check_lemmas(tr)
    if not rep.applicable:
        out.failures.append(f"{label}: monitors not applicable ({rep.reason})")
    for x in rep.violations:
        out.failures.append(f"{label}: {x.rule} at k={x.k} {x.detail}".rstrip())
    if not v.decided:
        return
    states = tr.terminal_states()
    spread = max(max(x) - min(x) for x in states)
    if spread >= tr.quantizer.step:
        out.failures.append(f"{label}: terminal spread {spread} >= 1")
    ra = analysis.running_average(tr, keep_sequence=False)
    if ra.max_deviation > tr.quantizer.step:
        out.failures.append(f"{label}: running-average limit off by {ra.max_deviation}")


def verify(
    n: int = 10,
    runs: int = 50,
    seed: int = 0,
    families: Sequence[str] = ("er", "rgg"),
    Cs: Sequence = (2, 3),
    quantizers: Sequence[str] = ("trunc", "ceil", "round"),
    max_iters: int = DEFAULT_MAX_ITERS,
) -> VerifyResult:
    """Simulate seeded instances and run every monitor; ``runs`` counts instances per family."""
    res = VerifyResult()
    for fam in families:
        for s in range(seed, seed + runs):
            C = to_fraction(Cs[s % len(Cs)])
            qv = quantizers[s % len(quantizers)]
            cfg = ExperimentConfig(family=fam, n=n, C=C, quantizer=qv, runs=1, seed=s, p=Fraction(3, 10))
            g = build_graph(cfg, s)
            W = build_weights(cfg, g)
            x0 = build_initial(cfg, s)
            tr = simulate(W, QuantizerKind(qv), x0, max_iters, graph=g)
            verify_trace(tr, f"{fam} seed={s} C={format_rational(C)} q={qv}", res)
    return res
