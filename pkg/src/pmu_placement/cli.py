"""Command-line front end: ``pmu-placement {solve,vsi,phasing,multi}``.

Exit codes: 0 success, 1 unreadable case or bad arguments, 2 infeasible
problem or base-case power-flow divergence, 3 solver budget exhausted (the
best placement found is still reported).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import report as rpt
from .exact import InfeasibleError, SolveRequest, solve_min
from .grid import CaseParseError, Network, connectivity, dump_model, load_case
from .observability import SCENARIOS, ResilienceOptions, coverage, system_redundancy
from .phasing import EXACT, GREEDY, plan, stage_report
from .power_flow import UnconvergedError
from .stability import DEFAULT_STEP, load_buses, rank_critical
from .tlbo import Problem, TlboConfig, TlboInfeasibleError, multi_objective_solve, optimize

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_BUDGET = 0, 1, 2, 3
log = logging.getLogger(__name__)


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunConfig:
    case_path: str
    scenario: str = "zib"
    solver: str = "exact"
    seed: int = 0
    tlbo: TlboConfig = field(default_factory=TlboConfig)
    output_format: str = "table"
    output_path: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.solver not in ("exact", "tlbo"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.output_format not in rpt.FORMATS:
            raise ValueError(f"unknown format {self.output_format!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _weights(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("--weights needs exactly three values")
    return parts


def _load(cfg: RunConfig) -> Network:
    try:
        return load_case(cfg.case_path)
    except (OSError, CaseParseError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot load case {cfg.case_path!r}: {exc}", EXIT_INPUT) from exc


# -- commands ------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, node_budget: int | None = None, figure: str | None = None,
              history_path: str | None = None) -> tuple[int, dict]:
    net = _load(cfg)
    opts = ResilienceOptions.for_scenario(cfg.scenario)
    code = EXIT_OK
    history = None
    if cfg.solver == "exact":
        req = SolveRequest(net, opts) if node_budget is None else SolveRequest(net, opts, node_budget=node_budget)
        try:
            res = solve_min(req)
        except InfeasibleError as exc:
            raise CliError(str(exc), EXIT_INFEASIBLE) from exc
        best, proven = res.best, res.proven_optimal
        extra = {"nodes_explored": res.nodes_explored}
        if not proven:
            code = EXIT_BUDGET
    else:
        try:
            best, history = optimize(Problem(net, opts), cfg.tlbo)
        except TlboInfeasibleError as exc:
            raise CliError(str(exc), EXIT_INFEASIBLE) from exc
        proven = False
        extra = {"iterations": cfg.tlbo.max_iterations, "seed": cfg.tlbo.seed}
        if history_path:
            Path(history_path).write_text(history.to_csv())
    f = coverage(connectivity(net), best)
    summary = {
        "case": net.name,
        "scenario": cfg.scenario,
        "solver": cfg.solver,
        "count": best.count,
        "locations": best.buses(net),
        "redundancy": system_redundancy(net, best, opts),
        "proven_optimal": proven,
        **extra,
    }
    rows = [[b, int(f[i]), int(best.x[i])] for i, b in enumerate(net.bus_ids)]
    report = rpt.make_report("solve", summary, ["bus", "coverage", "pmu"], rows)
    if figure:
        if history is not None:
            rpt.plot_convergence(history.best_value, figure, f"{net.name} {cfg.scenario}")
        else:
            rpt.plot_coverage(net.bus_ids, [int(v) for v in f], figure, f"{net.name} {cfg.scenario}")
    return code, report


def cmd_vsi(cfg: RunConfig, step: float = DEFAULT_STEP, critical_k: int = 5, figure: str | None = None) -> tuple[int, dict]:
    net = _load(cfg)
    k = min(critical_k, len(load_buses(net)))
    try:
        ranking = rank_critical(net, step=step, k=k)
    except UnconvergedError as exc:
        raise CliError(str(exc), EXIT_INFEASIBLE) from exc
    rows = [
        [n, r.load_bus, r.q_max, r.vsi_at_limit, f"{r.critical_line[0]}-{r.critical_line[1]}", r.stop_reason]
        for n, r in enumerate(ranking.records, start=1)
    ]
    summary = {"case": net.name, "step": step, "critical_buses": list(ranking.critical_buses)}
    report = rpt.make_report("vsi", summary, ["rank", "load_bus", "q_max", "vsi", "critical_line", "stop"], rows)
    if figure:
        rpt.plot_loadability([r.load_bus for r in ranking.records], [r.q_max for r in ranking.records], figure, net.name)
    return EXIT_OK, report


def cmd_phasing(cfg: RunConfig, budgets: Sequence[int], method: str = EXACT, use_zib: bool = False,
                figure: str | None = None) -> tuple[int, dict]:
    net = _load(cfg)
    try:
        p = plan(net, budgets, ResilienceOptions(use_zib=use_zib), method=method)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    table = stage_report(p)
    rows = [
        [t, list(s.new_buses), cum, s.observed, pct]
        for (t, cum, pct), s in zip(table, p.stages)
    ]
    summary = {
        "case": net.name,
        "budgets": list(budgets),
        "method": method,
        "use_zib": use_zib,
        "proven_optimal": all(s.proven_optimal for s in p.stages),
    }
    report = rpt.make_report("phasing", summary, ["stage", "new_buses", "cumulative_pmus", "observed", "cumulative_pct"], rows)
    if figure:
        rpt.plot_phasing([0] + [r[1] for r in table], [0.0] + [r[2] for r in table], figure, net.name)
    return EXIT_OK, report


def cmd_multi(cfg: RunConfig, weights: tuple[float, float, float] | None = None, step: float = DEFAULT_STEP,
              critical_k: int = 5, figure: str | None = None) -> tuple[int, dict]:
    net = _load(cfg)
    k = min(critical_k, len(load_buses(net)))
    try:
        ranking = rank_critical(net, step=step, k=k)
        res = multi_objective_solve(net, weights, ranking.line_vsi, ranking.critical_buses, cfg.tlbo)
    except UnconvergedError as exc:
        raise CliError(str(exc), EXIT_INFEASIBLE) from exc
    except TlboInfeasibleError as exc:
        raise CliError(str(exc), EXIT_INFEASIBLE) from exc
    opts = ResilienceOptions(use_zib=True)
    summary = {
        "case": net.name,
        "count": res.placement.count,
        "locations": res.placement.buses(net),
        "redundancy": system_redundancy(net, res.placement, opts),
        "wsoi": res.wsoi,
        "objective": res.objective,
        "critical_buses": list(ranking.critical_buses),
        "wsoi_definition_ambiguous": res.wsoi_ambiguous,
        "seed": cfg.tlbo.seed,
    }
    rows = [[b, v, 2 <= v] for b, v in res.vsoi.items()]
    report = rpt.make_report("multi", summary, ["critical_bus", "vsoi", "vsoi_ok"], rows)
    if figure:
        rpt.plot_convergence(res.history.best_value, figure, f"{net.name} multi-objective")
    return EXIT_OK, report


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", required=True, help="case file path or ieee14/ieee30/ieee118")
    common.add_argument("--format", choices=rpt.FORMATS, default="table")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--dump-model", metavar="PATH", help="also write the parsed network as JSON")
    common.add_argument("--figure", metavar="PATH", help="render a matplotlib figure to this file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--iterations", type=int, default=100, help="TLBO iterations")
    common.add_argument("--population", type=int, default=40)
    common.add_argument("--groups", type=int, default=4)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pmu-placement", description="Resilient PMU placement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="minimum PMU placement")
    s.add_argument("--scenario", choices=SCENARIOS, default="zib")
    s.add_argument("--solver", choices=("exact", "tlbo"), default="exact")
    s.add_argument("--node-budget", type=int, default=None)
    s.add_argument("--history", metavar="PATH", help="TLBO convergence history CSV")

    v = sub.add_parser("vsi", parents=[common], help="loadability sweep and VSI ranking")
    v.add_argument("--step", type=float, default=DEFAULT_STEP)
    v.add_argument("--critical-k", type=int, default=5)

    p = sub.add_parser("phasing", parents=[common], help="staged installation plan")
    p.add_argument("--budgets", type=_int_list, required=True, help="e.g. 1,1,1,1")
    p.add_argument("--method", choices=(EXACT, GREEDY), default=EXACT)
    p.add_argument("--zib", action="store_true", help="count ZIB-inferred buses as observed")

    m = sub.add_parser("multi", parents=[common], help="multi-objective placement with VSOI constraints")
    m.add_argument("--weights", type=_weights, default=None, help="lambda1,lambda2,lambda3")
    m.add_argument("--step", type=float, default=DEFAULT_STEP)
    m.add_argument("--critical-k", type=int, default=5)
    return parser


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_bytes(text.encode("utf-8"))
    else:
        sys.stdout.write(text)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        tlbo = TlboConfig(population=args.population, groups=args.groups, max_iterations=args.iterations, seed=args.seed)
        cfg = RunConfig(
            case_path=args.case,
            scenario=getattr(args, "scenario", "zib"),
            solver=getattr(args, "solver", "exact"),
            seed=args.seed,
            tlbo=tlbo,
            output_format=args.format,
            output_path=args.out,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        if args.dump_model:
            Path(args.dump_model).write_text(dump_model(_load(cfg)) + "\n")
        if args.command == "solve":
            code, report = cmd_solve(cfg, args.node_budget, args.figure, args.history)
        elif args.command == "vsi":
            code, report = cmd_vsi(cfg, args.step, args.critical_k, args.figure)
        elif args.command == "phasing":
            code, report = cmd_phasing(cfg, args.budgets, args.method, args.zib, args.figure)
        else:
            code, report = cmd_multi(cfg, args.weights, args.step, args.critical_k, args.figure)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _emit(rpt.render(report, cfg.output_format), cfg.output_path)
    if code == EXIT_BUDGET:
        print("warning: node budget exhausted; best placement found is reported", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
