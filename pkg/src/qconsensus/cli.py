"""Command-line front end: ``qconsensus {gen-graph,simulate,analyze,experiment,verify}``.

Exit codes: 0 success, 1 usage or validation error, 2 invariant violation,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

from . import analysis, experiments
from .dynamics import (
    DEFAULT_MAX_ITERS,
    Trace,
    read_trace_csv,
    read_verdict_json,
    simulate,
    write_trace_csv,
    write_verdict_json,
)
from .errors import AssumptionViolated, InvariantViolation, QConsensusError
from .graph import (
    complete_bipartite_regular,
    complete_graph,
    erdos_renyi,
    path_graph,
    random_geometric,
    read_edge_list,
    write_edge_list,
)
from .numeric import format_rational, parse_rational
from .quantizer import VARIANTS, QuantizerKind, reduce_to_truncation
from .weights import metropolis, modified_metropolis, read_weights, two_node_cyclic, validate_assumption1

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("qconsensus")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for invariant violations here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def rational(text: str) -> Fraction:
    try:
        return parse_rational(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def rational_list(text: str) -> list[Fraction]:
    return [rational(t.strip()) for t in text.split(",") if t.strip()]


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qconsensus", description="Exact simulation of quantized distributed averaging.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-graph", help="generate a connected graph and write its edge list")
    g.add_argument("--family", choices=("er", "rgg", "path", "complete", "bipartite"), default="er")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--p", type=rational, default=Fraction(3, 10), help="edge probability (er)")
    g.add_argument("--c", type=rational, default=Fraction(2), help="radius constant, R = sqrt(c ln n / n) (rgg)")
    g.add_argument("--radius", type=rational, help="explicit connectivity radius (rgg)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="edge-list file")

    s = sub.add_parser("simulate", help="run one trajectory; write trace CSV and verdict JSON")
    _add_system_args(s)
    s.add_argument("--x0", type=rational_list, help="comma-separated initial values (p/q or decimals)")
    s.add_argument("--init", choices=("uniform", "forced"), default="uniform", help="random recipe when --x0 is absent")
    s.add_argument("--target", type=rational, default=Fraction(1, 2), help="fractional part of x_ave (forced)")
    s.add_argument("--seed", type=int, default=0, help="seed for random initial values and prob quantizer")
    s.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    s.add_argument("--record", default="full", help="full | every:K | none")
    s.add_argument("--force", action="store_true", help="run even if the weight assumption fails")
    s.add_argument("--out", default="sim_out", help="output directory")

    a = sub.add_parser("analyze", help="replay a trace CSV through the monitors and write a report")
    _add_system_args(a)
    a.add_argument("--trace", required=True, help="trace CSV written by simulate")
    a.add_argument("--verdict", help="verdict JSON; scanned from the trace if absent")
    a.add_argument("--report", default="report.json")
    a.add_argument("--instrumentation", help="also write the per-iteration instrumentation CSV here")
    a.add_argument("--force-bounds", action="store_true", help="evaluate waiting-time bounds for any n")

    e = sub.add_parser(
        "experiment",
        help="run a config file or a named study",
        description="Config keys (flat key = value): " + ", ".join(experiments.CONFIG_KEYS),
    )
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="flat key = value config file")
    src.add_argument("--preset", choices=experiments.PRESETS)
    e.add_argument("--full", action="store_true", help="presets at n=100 with 100 runs")
    e.add_argument("--runs", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--trace-sample", type=int, help="write instrumentation for this many runs per cell")
    e.add_argument("--out", help="output directory")

    v = sub.add_parser("verify", help="run every invariant monitor on seeded instances")
    v.add_argument("--n", type=int, default=10)
    v.add_argument("--runs", type=int, default=50, help="instances per graph family")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--families", default="er,rgg")
    v.add_argument("--C", type=rational_list, default=[Fraction(2), Fraction(3)])
    v.add_argument("--quantizers", default="trunc,ceil,round")
    v.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    return p


def _add_system_args(s: argparse.ArgumentParser) -> None:
    s.add_argument("--graph", help="edge-list file")
    s.add_argument("--weights", default="modified", help="metropolis | modified | two_node | path to a weight file")
    s.add_argument("--C", type=rational, default=Fraction(2), help="modified Metropolis divisor, C >= 2")
    s.add_argument("--w", type=rational, default=Fraction(1, 25), help="self-weight of the two-node design")
    s.add_argument("--quantizer", choices=VARIANTS, default="trunc")
    s.add_argument("--step", type=rational, default=Fraction(1), help="quantization step")


def _system(args):
    g = read_edge_list(args.graph) if args.graph else None
    scheme = args.weights
    if scheme in ("metropolis", "modified"):
        if g is None:
            raise UsageError(f"--weights {scheme} needs --graph")
        W = metropolis(g) if scheme == "metropolis" else modified_metropolis(g, args.C)
    elif scheme == "two_node":
        g = g or path_graph(2)
        W = two_node_cyclic(args.w)
    else:
        W = read_weights(scheme)
    if g is not None and g.n != W.n:
        raise UsageError("graph and weights disagree on n")
    return g, W


def cmd_gen_graph(args) -> int:
    if args.family == "er":
        g = erdos_renyi(args.n, float(args.p), args.seed)
    elif args.family == "rgg":
        radius = None if args.radius is None else float(args.radius)
        g, _ = random_geometric(args.n, float(args.c), args.seed, radius=radius)
    elif args.family == "path":
        g = path_graph(args.n)
    elif args.family == "complete":
        g = complete_graph(args.n)
    else:
        if args.n % 2:
            raise UsageError("bipartite family needs even n")
        g = complete_bipartite_regular(args.n // 2, args.n // 2)
    write_edge_list(g, args.out)
    print(f"wrote {args.out}: n={g.n} m={g.m}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    g, W = _system(args)
    q = QuantizerKind(args.quantizer, args.step, seed=args.seed)
    if args.x0 is not None:
        x0 = args.x0
        if len(x0) != W.n:
            raise UsageError(f"--x0 has {len(x0)} values, the network has {W.n} nodes")
    elif args.init == "forced":
        x0 = experiments.forced_initial(W.n, args.seed, args.target)
    else:
        x0 = experiments.uniform_initial(W.n, args.seed)
    if args.force and not validate_assumption1(W, g).satisfied:
        log.warning("weight assumption fails; running anyway")
    tr = simulate(W, q, x0, args.max_iters, record=args.record, force=args.force, graph=g)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(tr, out / "trace.csv")
    write_verdict_json(tr.verdict, out / "verdict.json")
    print(json.dumps(tr.verdict.to_json()))
    return EXIT_OK


def cmd_analyze(args) -> int:
    g, W = _system(args)
    q = QuantizerKind(args.quantizer, args.step)
    rows = read_trace_csv(args.trace)
    ks = [k for k, _ in rows]
    if ks != list(range(len(ks))):
        raise UsageError("trace must hold every iteration from 0 (simulate --record full)")
    verdict = read_verdict_json(args.verdict) if args.verdict else None
    tr = Trace.from_states(W, q, [x for _, x in rows], verdict, graph=g)
    rep = analysis.check_lemmas(tr, force_bounds=args.force_bounds)
    report = {
        "verdict": tr.verdict.to_json(),
        "applicable": rep.applicable,
        "reason": rep.reason,
        "checks": rep.checks,
        "violations": [{"rule": v.rule, "k": v.k, "detail": v.detail} for v in rep.violations],
        "first_violation": None if rep.first is None else rep.first.rule,
    }
    if rep.r_measurements:
        report["max_R"] = max(r for _, r in rep.r_measurements)
        report["drop_wait_bound"] = format_rational(rep.drop_wait_bound)
    if tr.verdict.decided and tr.terminal:
        d = analysis.d_infinity(tr)
        report["d_inf_sq"] = format_rational(d.squared)
        report["d_inf"] = d.decimal
        ra = analysis.running_average(tr, keep_sequence=False)
        report["running_average_limit"] = [format_rational(v) for v in ra.limit]
    if q.deterministic:
        y0, _ = reduce_to_truncation(q, tr.x0)
        a = analysis.alpha_max_for(W, y0)
        report["alpha_max"] = format_rational(a)
        report["certificate"] = analysis.consensus_certificate(y0, a)
    if args.instrumentation and rep.applicable:
        analysis.write_instrumentation_csv(analysis.instrument(tr), args.instrumentation)
    Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    status = "not applicable: " + rep.reason if not rep.applicable else f"{len(rep.violations)} violation(s)"
    print(f"{tr.verdict.kind}; monitors {status}; report in {args.report}")
    return EXIT_INVARIANT if rep.violations else EXIT_OK


def cmd_experiment(args) -> int:
    if args.preset:
        cfg, key, values = experiments.preset(args.preset, full=args.full)
    else:
        cfg, key, values = experiments.load_config(args.config)
    over = {k: getattr(args, k) for k in ("runs", "seed", "workers", "trace_sample", "out") if getattr(args, k) is not None}
    cfg = replace(cfg, **over)
    if args.preset == "c-sweep":
        res, summary = experiments.sweep_C(cfg, values)
        for s in summary:
            print(f"C={format_rational(s.C)} max deviation={s.max_deviation} bound 2/C ok={s.within_bound}")
    else:
        res = experiments.run_experiment(cfg, key, values)
    print(",".join(experiments.SWEEP_HEADER))
    for c in res.cells:
        print(",".join(str(x) for x in c.row()))
    return EXIT_OK


def cmd_verify(args) -> int:
    res = experiments.verify(
        n=args.n,
        runs=args.runs,
        seed=args.seed,
        families=[f.strip() for f in args.families.split(",")],
        Cs=args.C,
        quantizers=[q.strip() for q in args.quantizers.split(",")],
        max_iters=args.max_iters,
    )
    for line in res.failures:
        print("FAIL", line)
    print(f"{res.runs} runs, verdicts {res.verdicts}, {len(res.failures)} failure(s)")
    return EXIT_OK if res.ok else EXIT_INVARIANT


COMMANDS = {
    "gen-graph": cmd_gen_graph,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "experiment": cmd_experiment,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssumptionViolated as exc:
        print(f"error: weight assumption violated: {exc}", file=sys.stderr)
        for rule, loc in exc.violations:
            print(f"  {rule} at {loc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QConsensusError, RuntimeError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
