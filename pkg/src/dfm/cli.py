"""Command-line front end: load or generate instances, run the feasible
method or the pairwise baselines, emit traces and summaries."""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import baselines, benchmarks, engine, matpower, reachability, serialize
from .model import evaluate_objective, validate_problem

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_FOUND = 3
EXIT_PARSE = 4
EXIT_VALIDATION = 5
EXIT_INFEASIBLE = 6
EXIT_SOLVER = 7

BUILTINS = ("example1", "example2", "dispatch", "multiresource", "ratecontrol")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def bundled_case_text(name="case_ring118.m"):
    return resources.files("dfm.data").joinpath(name).read_text()


def _load_case(path, demand, rho):
    if rho is None:
        rho = 1e-3
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read case file: {exc}", EXIT_NOT_FOUND)
    try:
        case = matpower.parse_matpower_case(text)
        return benchmarks.gen_economic_dispatch(case, c=demand, rho=rho)
    except matpower.MatpowerParseError as exc:
        raise CliError(f"parse error: {exc}", EXIT_PARSE)
    except benchmarks.InfeasibleInstance as exc:
        raise CliError(str(exc), EXIT_INFEASIBLE)
    except benchmarks.BenchmarkError as exc:
        raise CliError(str(exc), EXIT_VALIDATION)


def _builtin_spec(name, args, rho):
    if rho is None:
        rho = 1e-4 if name.startswith("example") else 1e-3
    if name == "example1":
        return benchmarks.example_problems(1, add_edge_14=args.add_edge_14, rho=rho)
    if name == "example2":
        return benchmarks.example_problems(2, add_edge_14=args.add_edge_14, rho=rho)
    if name == "dispatch":
        case = matpower.parse_matpower_case(bundled_case_text())
        demand = args.demand if args.demand is not None else 0.5 * sum(
            g.pmin + g.pmax for g in case.gens)
        return benchmarks.gen_economic_dispatch(case, c=demand, rho=rho)
    if name == "multiresource":
        rng = np.random.default_rng(args.seed)
        n = args.n or 8
        users = []
        for i in range(n):
            role = ("renewable", "coal")[int(rng.integers(2))] if i < n // 2 else "consumer"
            users.append(benchmarks.ResourceUser(
                alpha=float(rng.uniform(0.5, 2.0)), beta=float(rng.uniform(0.1, 1.0)),
                demand=float(rng.uniform(0.5, 2.0)) if role == "consumer" else 0.0,
                role=role, capacity=float(rng.uniform(2.0, 5.0) * n)))
        edges = tuple((i, i + 1) for i in range(n - 1))
        from .model import Graph
        return benchmarks.gen_multi_resource(users, Graph(n, edges), rho=rho)
    if name == "ratecontrol":
        net = benchmarks.fig1_chain_network()
        utils = benchmarks.random_rate_utilities(net, seed=args.seed)
        return benchmarks.gen_rate_control(net, utils, rho=rho)
    raise CliError(f"unknown builtin {name!r} (choose from {', '.join(BUILTINS)})",
                   EXIT_USAGE)


def _resolve_spec(args, rho):
    sources = [s for s in (args.builtin, args.instance, args.case) if s]
    if len(sources) != 1:
        raise CliError("exactly one of --builtin, --instance, --case required",
                       EXIT_USAGE)
    if args.case:
        if args.demand is None:
            raise CliError("--case requires --demand", EXIT_USAGE)
        return _load_case(args.case, args.demand, rho)
    if args.instance:
        try:
            text = Path(args.instance).read_text()
        except OSError as exc:
            raise CliError(f"cannot read instance file: {exc}", EXIT_NOT_FOUND)
        try:
            spec = serialize.loads(text)
        except serialize.FormatError as exc:
            raise CliError(str(exc), EXIT_PARSE)
        from dataclasses import replace
        return replace(spec, barrier_weight=rho) if rho is not None else spec
    return _builtin_spec(args.builtin, args, rho)


def _pick_rho(args, spec_builder):
    """Resolve the barrier weight: explicit, accuracy-driven, or default."""
    if args.rho is not None and args.epsilon is not None:
        raise CliError("--rho and --epsilon are mutually exclusive", EXIT_USAGE)
    if args.epsilon is not None:
        # build once with a placeholder weight to measure the reference point
        probe = spec_builder(1.0)
        x0 = benchmarks.feasible_initialization(probe)
        obj = evaluate_objective(probe, x0)
        if obj.B <= 0:
            raise CliError("accuracy-driven weight needs local constraints",
                           EXIT_VALIDATION)
        f_low = benchmarks.f_lower_bound(probe)
        return benchmarks.rho_for_accuracy(args.epsilon, obj.f, f_low, obj.B)
    return args.rho


def _out_dir(args):
    base = args.out_dir or os.environ.get("DFM_OUT_DIR") or "."
    Path(base).mkdir(parents=True, exist_ok=True)
    return Path(base)


def cmd_run(args):
    def builder(rho):
        return _resolve_spec(args, rho)

    rho = _pick_rho(args, builder)
    rho_values = [float(r) for r in args.rho_list.split(",")] if args.rho_list \
        else [rho]

    out = _out_dir(args)
    status = EXIT_OK
    for rv in rho_values:
        spec = builder(rv)
        report = validate_problem(spec)
        if not report.ok:
            raise CliError("; ".join(report.errors), EXIT_VALIDATION)
        tag = f"_rho{rv:g}" if len(rho_values) > 1 else ""
        trace_path = out / (args.trace or f"trace{tag}.csv")
        summary_path = out / (args.summary or f"summary{tag}.json")
        status = max(status, _run_once(spec, args, trace_path, summary_path))
    return status


def _run_once(spec, args, trace_path, summary_path):
    try:
        x0 = benchmarks.feasible_initialization(spec)
    except benchmarks.InfeasibleInstance as exc:
        raise CliError(str(exc), EXIT_INFEASIBLE)

    try:
        if args.method == "dfm":
            trace, final = engine.run(spec, x0, rounds=args.rounds,
                                      workers=args.threads)
        else:
            trace, final = baselines.run_baseline(
                spec, x0, rounds=args.rounds,
                constrained=args.method == "naive-constrained")
    except (engine.EngineError, Exception) as exc:
        if isinstance(exc, CliError):
            raise
        raise CliError(f"solver failure: {exc}", EXIT_SOLVER)

    trace_path.write_text("\n".join(trace.csv_lines(
        include_timing=not args.no_timing)) + "\n")

    verdict = reachability.check_reachability(spec) \
        if spec.total_dim <= engine.DENSE_DIAGNOSTICS_CAP else None
    stationary_nonoptimal = bool(
        args.method != "dfm"
        and max(float(np.max(np.abs(a - b), initial=0.0))
                for a, b in zip(final.blocks, x0.blocks)) <= 1e-10
        and trace.rows[0].F - trace.rows[-1].F <= 1e-12)
    bound_checks = engine.theory_report(spec, trace,
                                        benchmarks.f_lower_bound(spec)) \
        if args.method == "dfm" else None
    summary = {
        "instance": spec.name,
        "method": args.method,
        "rho": spec.barrier_weight,
        "rounds_recorded": len(trace.rows),
        "final_allocation": [b.tolist() for b in final.blocks],
        "final_objective": trace.rows[-1].F,
        "feasibility": {
            "coupling_residual": trace.rows[-1].coupling_residual,
            "interior_margin": trace.rows[-1].interior_margin,
            "every_iterate_feasible": bool(
                all(r.coupling_residual <= 1e-8 for r in trace.rows)),
        },
        "reachability": None if verdict is None else {
            "holds": verdict.holds, "dim_sum": verdict.dim_sum,
            "dim_null_A": verdict.dim_null_A},
        "stationary_at_nonoptimal_point": stationary_nonoptimal,
        "bound_checks": bound_checks,
    }
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    print(f"wrote {trace_path} and {summary_path}")
    if stationary_nonoptimal:
        print("warning: stationary at non-optimal point")
    return EXIT_OK


def cmd_check(args):
    spec = _resolve_spec(args, args.rho)
    report = validate_problem(spec)
    if not report.ok:
        raise CliError("; ".join(report.errors), EXIT_VALIDATION)
    applies, reason = reachability.check_lemma1_shortcut(spec)
    print(f"sufficient condition: {'applies' if applies else 'does not apply'} ({reason})")
    verdict = reachability.check_reachability(spec)
    print(f"reachability: {'holds' if verdict.holds else 'FAILS'} "
          f"(dim sum {verdict.dim_sum} vs dim null {verdict.dim_null_A})")
    if applies and not verdict.holds:
        raise CliError("sufficient condition applies but rank check failed",
                       EXIT_SOLVER)
    if spec.total_dim <= engine.DENSE_DIAGNOSTICS_CAP:
        wm = reachability.weighting_matrix(spec, engine.step_sizes(spec.graph))
        print(f"lambda_W = {wm.lambda_min_nonzero:.6g} (rank {wm.rank})")
    return EXIT_OK if verdict.holds else 1


def _add_source_args(p):
    p.add_argument("--builtin", choices=BUILTINS)
    p.add_argument("--instance", help="native JSON instance file")
    p.add_argument("--case", help="MATPOWER-style .m case file")
    p.add_argument("--demand", type=float, help="coupling demand for --case")
    p.add_argument("--add-edge-14", action="store_true",
                   help="add the {1,4} link to the example graphs")
    p.add_argument("--rho", type=float, default=None, help="barrier weight")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=None, help="builtin instance size")


def build_parser():
    ap = argparse.ArgumentParser(prog="dfm",
                                 description="feasible distributed resource allocation")
    sub = ap.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a method and write trace + summary")
    _add_source_args(runp)
    runp.add_argument("--method", choices=("dfm", "naive", "naive-constrained"),
                      default="dfm")
    runp.add_argument("--epsilon", type=float, default=None,
                      help="target cost accuracy (chooses the barrier weight)")
    runp.add_argument("--rho-list", default=None,
                      help="comma-separated barrier weights for a sweep")
    runp.add_argument("--rounds", type=int, default=500)
    runp.add_argument("--threads", type=int, default=1,
                      help="intra-round workers (must not change results)")
    runp.add_argument("--out-dir", default=None)
    runp.add_argument("--trace", default=None, help="trace CSV filename")
    runp.add_argument("--summary", default=None, help="summary JSON filename")
    runp.add_argument("--no-timing", action="store_true",
                      help="zero the ms column for reproducible traces")
    runp.set_defaults(func=cmd_run)

    checkp = sub.add_parser("check", help="reachability diagnostics")
    _add_source_args(checkp)
    checkp.set_defaults(func=cmd_check)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
