"""Command line entry point: ``gsc <command> ...``.

Exit codes: 0 success, 1 usage or data error, 2 solver failure,
3 infeasible or unbounded model.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coarsening import build_plan, formulate_coarse, lift_check, upper_bound_run
from .driver import LevelFailedError, format_gap, parse_levels, run_gsc
from .generate import EDGE_RULES, ConfigError, GenConfig, generate
from .io import (
    BundleError,
    bundle_digest,
    lower_stats_dict,
    params_dict,
    plan_document,
    read_allocation,
    read_instance,
    solution_document,
    upper_stats_dict,
    write_instance,
    write_json,
    write_report,
)
from .milp import (
    BACKEND_ENV,
    BackendUnavailableError,
    SolverError,
    SolverParams,
    Status,
    extract_allocation,
    formulate_full,
    get_backend,
    solve,
    write_lp,
)
from .model import check_feasibility, validate_instance
from .sampling import SAMPLING_MODES, formulate_sampled, lower_bound_run, sample_edges, sample_universe

log = logging.getLogger("gsc")

EXIT_OK, EXIT_DATA, EXIT_SOLVER, EXIT_INFEASIBLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return v


def _size(text):
    if text.lower() == "max":
        return "max"
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer or 'max', got {text}")
    return v


def _solver_args(p):
    g = p.add_argument_group("solver")
    g.add_argument("--backend", default=None, help=f"solver backend (default: ${BACKEND_ENV} or highs)")
    g.add_argument("--time-limit", type=_nonneg_float, default=None, help="seconds per solve")
    g.add_argument("--mip-gap", type=_nonneg_float, default=0.0, help="relative MIP gap per solve")
    g.add_argument("--threads", type=_positive_int, default=1, help="parallel draws/trials")
    g.add_argument("--solver-seed", type=int, default=0)


def _params(args) -> SolverParams:
    return SolverParams(time_limit=args.time_limit, mip_gap=args.mip_gap, threads=args.threads,
                        seed=args.solver_seed)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gsc", description="Sampling and coarsening bounds for supply-chain MILPs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic instance bundle")
    g.add_argument("--preset", choices=("toy", "small-study"), default=None)
    g.add_argument("--nodes", type=int, default=None)
    g.add_argument("--products", type=int, default=1)
    g.add_argument("--technologies", type=int, default=0)
    g.add_argument("--tech-density", type=float, default=0.25)
    g.add_argument("--suppliers", type=int, default=None)
    g.add_argument("--consumers", type=int, default=None)
    g.add_argument("--edge-rule", choices=EDGE_RULES, default="all-pairs")
    g.add_argument("--radius", type=float, default=0.5)
    g.add_argument("--cost-per-distance", type=float, default=10.0)
    g.add_argument("--include-self-loops", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--name", default="")
    g.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("solve", help="solve the full model directly")
    s.add_argument("--instance", required=True, type=Path)
    s.add_argument("--out", type=Path, default=None, help="solution JSON")
    s.add_argument("--lp", type=Path, default=None, help="also write the model in LP format")
    _solver_args(s)

    sm = sub.add_parser("sample", help="lower bounds from sampled edge sets")
    sm.add_argument("--instance", required=True, type=Path)
    sm.add_argument("--edges", required=True, type=_size)
    sm.add_argument("--draws", type=_positive_int, default=10)
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--mode", choices=SAMPLING_MODES, default="uniform")
    sm.add_argument("--out", type=Path, default=None)
    sm.add_argument("--no-figures", action="store_true")
    _solver_args(sm)

    c = sub.add_parser("coarsen", help="upper bounds from coarsened graphs")
    c.add_argument("--instance", required=True, type=Path)
    c.add_argument("--partitions", required=True, type=_size)
    c.add_argument("--draws", type=_positive_int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", type=Path, default=None)
    c.add_argument("--no-figures", action="store_true")
    _solver_args(c)

    r = sub.add_parser("gsc", help="run the multi-level bounding protocol")
    r.add_argument("--instance", required=True, type=Path)
    r.add_argument("--levels", required=True, help="comma list of edges:partitions:draws, 'max' allowed")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--gap-tol", type=_nonneg_float, default=0.0, help="stop once the gap (%%) is this small")
    r.add_argument("--time-budget", type=_nonneg_float, default=None)
    r.add_argument("--mode", choices=SAMPLING_MODES, default="uniform")
    r.add_argument("--out", type=Path, default=None, help="report directory")
    r.add_argument("--no-figures", action="store_true")
    _solver_args(r)

    rr = sub.add_parser("rerun", help="repeat a gsc run from a report's provenance")
    rr.add_argument("report", type=Path)
    rr.add_argument("--instance", type=Path, default=None, help="override the recorded bundle path")
    rr.add_argument("--out", type=Path, default=None)
    rr.add_argument("--no-figures", action="store_true")

    k = sub.add_parser("check", help="validate an instance and run lift diagnostics")
    k.add_argument("--instance", required=True, type=Path)
    k.add_argument("--partitions", type=_size, default=None, help="coarse plan size for lift checks")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--solution", type=Path, default=None, help="allocation JSON to check instead of solving")
    k.add_argument("--plan-out", type=Path, default=None)
    _solver_args(k)
    return p


def _resolve_size(v, limit):
    return limit if v == "max" else v


def cmd_gen(args) -> int:
    if args.preset == "toy":
        cfg = GenConfig.toy(args.seed)
    elif args.preset == "small-study":
        cfg = GenConfig.small_study(args.seed)
    else:
        if args.nodes is None:
            raise UsageError("gen: --nodes is required without --preset")
        cfg = GenConfig(
            nodes=args.nodes, products=args.products, technologies=args.technologies,
            tech_density=args.tech_density, suppliers=args.suppliers, consumers=args.consumers,
            edge_rule=args.edge_rule, radius=args.radius, cost_per_distance=args.cost_per_distance,
            include_self_loops=args.include_self_loops, seed=args.seed, name=args.name,
        )
    try:
        inst = generate(cfg)
    except ConfigError as exc:
        raise UsageError(f"gen: {exc}") from None
    write_instance(inst, args.out)
    print(f"wrote {args.out}: {inst.n_nodes} nodes, {inst.n_products} products, {inst.n_edges} edges, "
          f"{len(inst.suppliers)} suppliers, {len(inst.consumers)} consumers, {len(inst.technologies)} technologies")
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = read_instance(args.instance)
    prob = formulate_full(inst)
    if args.lp:
        write_lp(prob, args.lp)
    res = solve(prob, _params(args), args.backend)
    alloc = extract_allocation(inst, prob, res) if res.status.has_solution else None
    print(f"status: {res.status.value}")
    if alloc is not None:
        print(f"welfare: {alloc.welfare:.10g}")
        feas = check_feasibility(inst, alloc)
        print(f"feasible: {'yes' if feas else 'no'}")
    if res.bound is not None and res.status is not Status.OPTIMAL:
        print(f"best bound: {res.bound:.10g}")
    if res.mip_gap is not None and res.status is Status.FEASIBLE:
        print(f"mip gap: {res.mip_gap:.4g}")
    print(f"solve seconds: {res.wall_time:.3f}")
    if args.out:
        write_json(solution_document(inst, res, alloc), args.out)
    if res.status in (Status.INFEASIBLE, Status.UNBOUNDED):
        return EXIT_INFEASIBLE
    if res.status is Status.MEMORY_LIMIT:
        return EXIT_SOLVER
    return EXIT_OK


def cmd_sample(args) -> int:
    from .plotting import plot_sample

    inst = read_instance(args.instance)
    a = _resolve_size(args.edges, sample_universe(inst, args.mode))
    stats = lower_bound_run(inst, a, args.draws, _params(args), args.backend, args.seed, args.threads, args.mode)
    for d in stats.draws:
        w = "-" if d.welfare is None else f"{d.welfare:.10g}"
        print(f"draw {d.draw_index}: {d.status} welfare {w}")
    if stats.best is None:
        print("no draw produced a solution", file=sys.stderr)
        return EXIT_SOLVER
    print(f"best lower bound: {stats.best:.10g} (mean {stats.mean:.10g}, sd {stats.sd:.6g})")
    if args.out:
        doc = {"provenance": {"instance": str(args.instance), "edges": a, "draws": args.draws, "seed": args.seed,
                              "mode": args.mode, "solver": params_dict(_params(args), get_backend(args.backend).name)},
               "lower": lower_stats_dict(stats)}
        write_json(doc, args.out / "lower.json")
        if not args.no_figures:
            best = sample_edges(inst, a, args.seed + stats.best_draw, stats.best_draw, args.mode)
            plot_sample(inst, best, args.out / "sample.png")
    return EXIT_OK


def cmd_coarsen(args) -> int:
    from .plotting import plot_plan

    inst = read_instance(args.instance)
    C = _resolve_size(args.partitions, inst.n_nodes)
    stats = upper_bound_run(inst, C, args.draws, _params(args), args.backend, args.seed, args.threads)
    for t in stats.trials:
        w = "-" if t.welfare is None else f"{t.welfare:.10g}"
        print(f"trial {t.trial_index}: {t.status} bound {w} ({t.n_agg_edges} aggregated edges)")
    if stats.best is None:
        print("no trial produced a bound", file=sys.stderr)
        return EXIT_SOLVER
    print(f"best upper bound: {stats.best:.10g} (mean {stats.mean:.10g}, sd {stats.sd:.6g})")
    if args.out:
        doc = {"provenance": {"instance": str(args.instance), "partitions": C, "draws": args.draws,
                              "seed": args.seed,
                              "solver": params_dict(_params(args), get_backend(args.backend).name)},
               "upper": upper_stats_dict(stats)}
        write_json(doc, args.out / "upper.json")
        write_json(plan_document(stats.best_plan), args.out / "plan.json")
        if not args.no_figures:
            plot_plan(inst, stats.best_plan, args.out / "plan.png")
    return EXIT_OK


def _run_and_write(inst_path: Path, levels_text, seed, gap_tol, time_budget, mode, params, backend, out,
                   figures) -> int:
    inst = read_instance(inst_path)
    levels = parse_levels(levels_text)
    report = run_gsc(inst, levels, params, backend, seed, gap_tol, time_budget, params.threads, mode)
    print("level  edges  partitions  best LB  best UB  gap")
    for lv in report.levels:
        print(f"{lv.level:5d}  {lv.spec.edges:5d}  {lv.spec.partitions:10d}  {lv.best_lb:.10g}  "
              f"{lv.best_ub:.10g}  {format_gap(lv.gap)}")
    if report.stopped_early:
        print(f"stopped early: {report.stopped_early}")
    if out:
        prov = {"instance": str(inst_path), "instance_digest": bundle_digest(inst_path),
                "levels": levels_text, "time_budget": time_budget}
        paths = write_report(report, out, prov)
        if figures:
            from .plotting import report_figures

            report_figures(report, out)
        print(f"report written to {paths['json'].parent}")
    return EXIT_OK


def cmd_gsc(args) -> int:
    return _run_and_write(args.instance, args.levels, args.seed, args.gap_tol, args.time_budget, args.mode,
                          _params(args), args.backend, args.out, not args.no_figures)


def cmd_rerun(args) -> int:
    try:
        doc = json.loads(args.report.read_text())
        prov = doc["provenance"]
        solver = prov["solver"]
    except (OSError, ValueError, KeyError) as exc:
        raise BundleError(f"cannot read provenance from {args.report}: {exc}") from None
    inst_path = args.instance or Path(prov["instance"])
    if args.instance is None and bundle_digest(inst_path) != prov.get("instance_digest"):
        log.warning("instance bundle %s differs from the one recorded in the report", inst_path)
    params = SolverParams(time_limit=solver["time_limit"], mip_gap=solver["mip_gap"], threads=solver["threads"],
                          seed=solver["seed"])
    return _run_and_write(inst_path, prov["levels"], prov["seed"], prov["gap_tol"], prov.get("time_budget"),
                          prov["sampling_mode"], params, solver["backend"], args.out, not args.no_figures)


def cmd_check(args) -> int:
    inst = read_instance(args.instance, validate=False)
    bad = validate_instance(inst)
    for v in bad:
        print(f"violation: {v}")
    if bad:
        return EXIT_DATA
    print(f"instance ok: {inst.n_nodes} nodes, {inst.n_products} products, {inst.n_edges} edges")
    if args.partitions is None:
        return EXIT_OK
    if args.solution:
        alloc = read_allocation(args.solution, inst)
    else:
        prob = formulate_full(inst)
        res = solve(prob, _params(args), args.backend)
        if not res.status.has_solution:
            print(f"full solve returned {res.status.value}; nothing to lift", file=sys.stderr)
            return EXIT_SOLVER
        alloc = extract_allocation(inst, prob, res)
    feas = check_feasibility(inst, alloc)
    print(f"allocation feasible: {'yes' if feas else 'no'}")
    for v in feas.violations:
        print(f"  {v}")
    if not feas:
        return EXIT_DATA
    C = _resolve_size(args.partitions, inst.n_nodes)
    plan = build_plan(inst, C, args.seed)
    rep = lift_check(inst, plan, alloc)
    coarse = formulate_coarse(inst, plan)
    print(f"plan: {plan.n_partitions} partitions, {len(plan.local_edges)} local edges, "
          f"{plan.n_agg_edges} aggregated edges, coarse model {coarse.n_vars} variables")
    print(f"lift: {'ok' if rep else 'FAILED'}; welfare {rep.full_welfare:.10g} -> coarse {rep.coarse_welfare:.10g}")
    for v in rep.violations:
        print(f"  {v}")
    if args.plan_out:
        write_json(plan_document(plan), args.plan_out)
    return EXIT_OK if rep else EXIT_DATA


COMMANDS = {
    "gen": cmd_gen, "solve": cmd_solve, "sample": cmd_sample, "coarsen": cmd_coarsen,
    "gsc": cmd_gsc, "rerun": cmd_rerun, "check": cmd_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, BundleError, ConfigError, ValueError) as exc:
        print(f"gsc {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, BackendUnavailableError, LevelFailedError) as exc:
        print(f"gsc {args.command}: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
