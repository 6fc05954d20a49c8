"""Command-line interface.

Exit codes:
  0   success
  1   invalid instance or inconsistent flags
  2   solver failure (infeasible, unbounded, node limit, no strict improvement)
  3   coalition budget exceeded
  4   reproduce-paper: at least one deterministic check failed
  64  usage error (unknown flag or value)
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, orders
from .aggregation import (
    AcceptabilityKind,
    AcceptTag,
    AggregationError,
    FairnessOperator,
    NoStrictImprovement,
    ZeroBaseline,
    solve_aggregate,
    solve_independent,
)
from .instance import (
    DeterministicInstance,
    InstanceError,
    StochasticInstance,
    ValidationError,
    instance_hash,
    load_instance,
    paper_stochastic_instance,
    paper_toy_instance,
)
from .milp import MilpError, SolverOptions, kernel_name
from .report import (
    Table,
    emit,
    purchase_csv_table,
    purchase_detail,
    savings_csv_table,
    savings_table,
)
from .shapley import (
    CoalitionBudgetExceeded,
    DEFAULT_BUDGET,
    allocation_csv_table,
    marginal_csv_table,
    shapley_values,
    worth_csv_table,
)
from .stochastic import (
    RiskMeasure,
    StochasticAcceptability,
    StochasticOperator,
    solve_stochastic,
    solve_stochastic_baseline,
)

log = logging.getLogger("fairagg")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_BUDGET, EXIT_CHECKS, EXIT_USAGE = 0, 1, 2, 3, 4, 64

DET_OPERATORS = {o.value: o for o in FairnessOperator}
STOCH_OPERATORS = {o.value: o for o in StochasticOperator}
DET_ACCEPT = ("none", "static", "average", "progressive", "stagewise")
STOCH_ACCEPT = {
    "none": StochasticAcceptability.NONE,
    "expectation": StochasticAcceptability.EXPECTATION,
    "ic": StochasticAcceptability.INCREASING_CONVEX,
    "first-order": StochasticAcceptability.FIRST_ORDER,
    "almost-sure": StochasticAcceptability.ALMOST_SURE,
}
BUILTINS = ("toy", "toy-stochastic")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _add_common(p: argparse.ArgumentParser, instance_required: bool = True):
    src = p.add_mutually_exclusive_group(required=instance_required)
    src.add_argument("--builtin", choices=BUILTINS, help="compiled-in instance")
    src.add_argument("--instance", type=Path, help="instance JSON file")
    p.add_argument("--scenarios", type=int, default=10, help="scenario count for toy-stochastic (default 10)")
    p.add_argument("--seed", type=int, help="sampling seed (required for stochastic runs)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for independent solves")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--solver", choices=("embedded", "highs"), help="overrides FAIRAGG_SOLVER")
    p.add_argument("--node-limit", type=int, default=1_000_000)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairagg", description="Fair aggregation of prosumers under a day-ahead volume rule.")
    parser.add_argument("--version", action="version", version=f"fairagg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve one model and write reports")
    _add_common(s)
    s.add_argument("--operator", required=True, choices=[*DET_OPERATORS, *STOCH_OPERATORS])
    s.add_argument("--accept", default="none", choices=sorted(set(DET_ACCEPT) | set(STOCH_ACCEPT)))
    s.add_argument("--alpha", type=float, default=1.0, help="factor for --accept static")
    s.add_argument("--risk", choices=[r.value for r in RiskMeasure], default="expectation", help="baseline risk measure")

    r = sub.add_parser("reproduce-paper", help="regenerate the reference tables and check them")
    r.add_argument("--out", type=Path, default=Path("reproduction"))
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--scenarios", type=int, default=10)
    r.add_argument("--seed", type=int, default=7)
    r.add_argument("--solver", choices=("embedded", "highs"), help="deterministic models (overrides FAIRAGG_SOLVER)")
    r.add_argument(
        "--stochastic-solver", choices=("embedded", "highs"), default="highs", help="stochastic models (default highs)"
    )

    h = sub.add_parser("shapley", help="coalition worths and Shapley allocation")
    _add_common(h)
    h.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="maximum number of coalition solves")
    return parser


# --- helpers -------------------------------------------------------------------


def _options(args) -> SolverOptions:
    kw = {"node_limit": args.node_limit} if hasattr(args, "node_limit") else {}
    if getattr(args, "solver", None):
        kw["backend"] = args.solver
    return SolverOptions(**kw)


def _solver_manifest(options: SolverOptions) -> dict:
    return {
        "backend": options.backend_name,
        "kernel": kernel_name(),
        "feasibility_tol": options.feasibility_tol,
        "integrality_tol": options.integrality_tol,
        "absolute_mip_gap": options.absolute_mip_gap,
        "node_limit": options.node_limit,
    }


def _load(args, stochastic: bool):
    if args.builtin == "toy":
        inst = paper_toy_instance()
    elif args.builtin == "toy-stochastic":
        if args.seed is None:
            raise UsageError("--seed is required for toy-stochastic")
        inst = paper_stochastic_instance(args.scenarios, args.seed)
    else:
        inst = load_instance(args.instance)
    if stochastic and not isinstance(inst, StochasticInstance):
        raise UsageError("stochastic operators need a stochastic instance (toy-stochastic or a file with scenarios)")
    if not stochastic and isinstance(inst, StochasticInstance):
        raise UsageError("deterministic operators need a deterministic instance")
    if stochastic:
        if args.seed is None:
            raise UsageError("--seed is required for stochastic runs")
        file_seed = inst.scenario_set.seed
        if file_seed is not None and file_seed != args.seed:
            raise UsageError(f"--seed {args.seed} does not match the instance's recorded seed {file_seed}")
    return inst


def _write(out: Path, name: str, table: Table, fmt: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.{fmt}"
    emit(table, path, fmt)
    return path


def _write_manifest(out: Path, doc: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _det_acceptability(name: str, alpha: float) -> AcceptabilityKind:
    if name not in DET_ACCEPT:
        raise UsageError(f"--accept {name} is not available for deterministic operators ({', '.join(DET_ACCEPT)})")
    if name == "static":
        return AcceptabilityKind.static(alpha)
    return AcceptabilityKind(AcceptTag(name))


def _baseline_table(v: np.ndarray, v_t: np.ndarray | None = None) -> Table:
    if v_t is None:
        return Table(["agent", "cost"], [[f"A{i + 1}", x] for i, x in enumerate(v)])
    T = v_t.shape[1]
    header = ["agent", "cost"] + [f"t{t + 1}" for t in range(T)]
    return Table(header, [[f"A{i + 1}", v[i], *v_t[i].tolist()] for i in range(v.size)])


# --- commands --------------------------------------------------------------------


def cmd_solve(args) -> int:
    stochastic = args.operator in STOCH_OPERATORS
    inst = _load(args, stochastic)
    options = _options(args)
    manifest = {
        "tool": "fairagg",
        "version": __version__,
        "command": "solve",
        "instance_source": args.builtin or str(args.instance),
        "instance_hash": instance_hash(inst),
        "flags": {
            "operator": args.operator,
            "accept": args.accept,
            "alpha": args.alpha,
            "risk": args.risk,
            "scenarios": args.scenarios if args.builtin == "toy-stochastic" else None,
            "format": args.format,
        },
        "seed": args.seed,
        "solver": _solver_manifest(options),
    }
    out, fmt = args.out, args.format
    if not stochastic:
        operator = DET_OPERATORS[args.operator]
        acc = _det_acceptability(args.accept, args.alpha)
        base = solve_independent(inst, options, jobs=args.jobs)
        ref = solve_aggregate(inst, operator, AcceptabilityKind.none(), base, options)
        sol = ref if acc.tag is AcceptTag.NONE else solve_aggregate(inst, operator, acc, base, options)
        rows = savings_table([ref, sol] if sol is not ref else [sol], base)
        _write(out, "baseline", _baseline_table(base.v, base.v_t), fmt)
        _write(out, "savings", savings_csv_table(rows), fmt)
        _write(out, "purchases", purchase_csv_table(purchase_detail(sol)), fmt)
        manifest["result"] = {"total": sol.total, "objective": sol.objective, "phase1_objective": sol.phase1_objective}
    else:
        if args.accept not in STOCH_ACCEPT:
            raise UsageError(f"--accept {args.accept} is not available for stochastic operators")
        operator = STOCH_OPERATORS[args.operator]
        acc = STOCH_ACCEPT[args.accept]
        sc = inst.scenario_set
        manifest["generator"] = sc.generator
        manifest["n_scenarios"] = sc.n_scenarios
        meta = {"generator": sc.generator, "seed": sc.seed, "n_scenarios": sc.n_scenarios}
        base = solve_stochastic_baseline(inst, RiskMeasure(args.risk), options, jobs=args.jobs)
        ref = solve_stochastic(inst, operator, StochasticAcceptability.NONE, base, options)
        sol = ref if acc is StochasticAcceptability.NONE else solve_stochastic(inst, operator, acc, base, options)
        rows = savings_table([ref, sol] if sol is not ref else [sol], base)
        _write(out, "baseline", _baseline_table(base.expectation), fmt)
        _write(out, "savings", savings_csv_table(rows, meta), fmt)
        _write(out, "purchases", purchase_csv_table(purchase_detail(sol)), fmt)
        _write(out, "scenario_costs", _scenario_table(sol.costs, meta), fmt)
        manifest["result"] = {
            "expected_total": sol.expected_total,
            "worst_total": sol.worst_total,
            "objective": sol.objective,
            "phase1_objective": sol.phase1_objective,
        }
    _write_manifest(out, manifest)
    print(f"{rows[-1].model}: total {rows[-1].total:.6g}; reports in {out}")
    return EXIT_OK


def _scenario_table(costs: np.ndarray, meta: dict) -> Table:
    n, W = costs.shape
    return Table(
        ["scenario"] + [f"A{i + 1}" for i in range(n)],
        [[str(w + 1), *costs[:, w].tolist()] for w in range(W)],
        meta,
    )


def cmd_shapley(args) -> int:
    inst = _load(args, stochastic=False)
    options = _options(args)
    base = solve_independent(inst, options, jobs=args.jobs)
    alloc = shapley_values(inst, base, options, budget=args.budget, jobs=args.jobs)
    out, fmt = args.out, args.format
    _write(out, "worth", worth_csv_table(alloc.table), fmt)
    _write(out, "marginals", marginal_csv_table(alloc.table), fmt)
    _write(out, "allocation", allocation_csv_table(alloc), fmt)
    _write_manifest(
        out,
        {
            "tool": "fairagg",
            "version": __version__,
            "command": "shapley",
            "instance_source": args.builtin or str(args.instance),
            "instance_hash": instance_hash(inst),
            "flags": {"budget": args.budget, "format": fmt},
            "seed": args.seed,
            "solver": _solver_manifest(options),
        },
    )
    phi = ", ".join(f"{x:.6g}" for x in alloc.phi)
    print(f"phi = ({phi}); grand-coalition worth {alloc.table.worth[-1]:.6g}")
    return EXIT_OK


# --- reproduction ----------------------------------------------------------------


class _Checks:
    def __init__(self):
        self.lines: list[str] = []
        self.det_failed = 0
        self.stoch_failed = 0

    def add(self, name: str, ok: bool, detail: str, stochastic: bool = False):
        self.lines.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        if not ok:
            if stochastic:
                self.stoch_failed += 1
            else:
                self.det_failed += 1


def _close(a, b, tol) -> bool:
    return bool(np.all(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) <= tol))


def _fmt(xs) -> str:
    return "(" + ", ".join(f"{x:.4g}" for x in np.atleast_1d(xs)) + ")"


def cmd_reproduce(args) -> int:
    out, fmt = args.out, args.format
    det_opts = SolverOptions(backend=args.solver) if args.solver else SolverOptions()
    stoch_opts = SolverOptions(backend=args.stochastic_solver)
    checks = _Checks()
    toy = paper_toy_instance()
    A = AcceptabilityKind
    U, P, SM = FairnessOperator.UTILITARIAN, FairnessOperator.PROPORTIONAL, FairnessOperator.SCALED_MINIMAX

    base = solve_independent(toy, det_opts, jobs=args.jobs)
    _write(out, "baseline", _baseline_table(base.v, base.v_t), fmt)
    checks.add("baselines", _close(base.v, [50, 280, 40, 168], 1e-6), f"v = {_fmt(base.v)}, expected (50, 280, 40, 168)")

    grid = [(op, acc) for op in (U, P, SM) for acc in (A.none(), A.static(1.0), A.average(), A.progressive(), A.stagewise())]

    def run(item):
        op, acc = item
        return solve_aggregate(toy, op, acc, base, det_opts)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            sols = list(pool.map(run, grid))
    else:
        sols = [run(g) for g in grid]
    by = {(op, acc.tag): s for (op, acc), s in zip(grid, sols)}

    static_rows = [by[op, t] for op in (U, P, SM) for t in (AcceptTag.NONE, AcceptTag.STATIC)]
    dyn_rows = [
        by[op, t] for op in (U, SM, P) for t in (AcceptTag.NONE, AcceptTag.AVERAGE, AcceptTag.PROGRESSIVE, AcceptTag.STAGEWISE)
    ]
    t2 = savings_table(static_rows, base)
    t3 = savings_table(dyn_rows, base)
    _write(out, "static_savings", savings_csv_table(t2), fmt)
    _write(out, "dynamic_savings", savings_csv_table(t3), fmt)
    for op in (U, P, SM):
        s = by[op, AcceptTag.NONE]
        _write(out, f"purchases_{op.value}", purchase_csv_table(purchase_detail(s)), fmt)

    u0, ua, sm0, p0 = by[U, AcceptTag.NONE], by[U, AcceptTag.STATIC], by[SM, AcceptTag.NONE], by[P, AcceptTag.NONE]
    checks.add("utilitarian total", abs(u0.total - 333) <= 1e-5, f"{u0.total:.6g}, expected 333")
    checks.add("utilitarian alpha=1 total", abs(ua.total - 346) <= 1e-5, f"{ua.total:.6g}, expected 346")
    checks.add("scaled minimax tau*", abs(sm0.phase1_objective - 0.7) <= 1e-6, f"{sm0.phase1_objective:.7f}, expected 0.700")
    checks.add("scaled minimax total", abs(sm0.total - 360) <= 1, f"{sm0.total:.6g}, expected 360")
    checks.add("proportional total", abs(p0.total - 373) <= 1, f"{p0.total:.6g}, expected 373")
    expected_rows = {
        "M(utilitarian,none)": [-64, 46, 72, 46],
        "M(utilitarian,static(1))": [48, 38, 0, 38],
        "M(proportional,none)": [74, 21, 80, 21],
        "M(proportional,static(1))": [74, 21, 80, 21],
        "M(scaled-minimax,none)": [60, 30, 30, 30],
        "M(scaled-minimax,static(1))": [60, 30, 30, 30],
    }
    for row in t2:
        exp = expected_rows[row.model]
        checks.add(f"savings {row.model}", _close(row.savings, exp, 1.0), f"{_fmt(row.savings)}, expected {_fmt(exp)}")
    for op in (SM, P):
        a, b = by[op, AcceptTag.NONE], by[op, AcceptTag.STATIC]
        checks.add(f"innate acceptability {op.value}", _close(a.stage_costs, b.stage_costs, 1e-6), "alpha=1 solution equals the unconstrained one")
    expected_poa = {U: (4, 17, 21), SM: (0, 8.6, 12), P: (0, 4.3, 8.0)}
    dyn_by = {(r.model): r for r in t3}
    for op, exp in expected_poa.items():
        got = [dyn_by[f"M({op.value},{t})"].poa_pct for t in ("average", "progressive", "stagewise")]
        checks.add(f"dynamic PoA {op.value}", _close(got, exp, 1.0), f"{_fmt(got)} %, expected {_fmt(exp)} %")
        totals = [dyn_by[f"M({op.value},{t})"].total for t in ("none", "average", "progressive", "stagewise")]
        mono = all(totals[k] <= totals[k + 1] + 1e-6 for k in range(3))
        checks.add(f"dynamic totals monotone {op.value}", mono, _fmt(totals))

    alloc = shapley_values(toy, base, det_opts, jobs=args.jobs)
    _write(out, "shapley_worth", worth_csv_table(alloc.table), fmt)
    _write(out, "shapley_marginals", marginal_csv_table(alloc.table), fmt)
    _write(out, "shapley_allocation", allocation_csv_table(alloc), fmt)
    triples = [alloc.table.worth[m] for m in (0b0111, 0b1011, 0b1101, 0b1110)]
    checks.add("shapley worth triples", _close(triples, [126, 133, 96, 96], 1e-6), f"{_fmt(triples)}, expected (126, 133, 96, 96)")
    checks.add("shapley grand worth", abs(alloc.table.worth[-1] - 205) <= 1e-6, f"{alloc.table.worth[-1]:.6g}, expected 205")
    checks.add("shapley phi", _close(alloc.phi, [56.8, 56.8, 44.5, 46.8], 0.1), f"{_fmt(alloc.phi)}, expected (56.8, 56.8, 44.5, 46.8)")
    checks.add("shapley savings", _close(alloc.savings, [114, 20, 111, 28], 1.0), f"{_fmt(alloc.savings)} %, expected (114, 20, 111, 28) %")

    _stochastic_report(args, stoch_opts, checks, out, fmt)

    summary = "\n".join(checks.lines) + "\n"
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    _write_manifest(
        out,
        {
            "tool": "fairagg",
            "version": __version__,
            "command": "reproduce-paper",
            "instance_hash": {"toy": instance_hash(toy)},
            "flags": {"scenarios": args.scenarios, "format": fmt},
            "seed": args.seed,
            "solver": {"deterministic": _solver_manifest(det_opts), "stochastic": _solver_manifest(stoch_opts)},
        },
    )
    sys.stdout.write(summary)
    return EXIT_CHECKS if checks.det_failed else EXIT_OK


def _stochastic_report(args, options: SolverOptions, checks: _Checks, out: Path, fmt: str) -> None:
    inst = paper_stochastic_instance(args.scenarios, args.seed)
    sc = inst.scenario_set
    meta = {"generator": sc.generator, "seed": sc.seed, "n_scenarios": sc.n_scenarios}
    base = solve_stochastic_baseline(inst, RiskMeasure.EXPECTATION, options, jobs=args.jobs)
    chain = list(STOCH_ACCEPT.values())
    grid = [(op, acc) for op in StochasticOperator for acc in chain]

    def run(item):
        return solve_stochastic(inst, item[0], item[1], base, options)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            sols = list(pool.map(run, grid))
    else:
        sols = [run(g) for g in grid]
    _write(out, "stochastic_savings", savings_csv_table(savings_table(sols, base), meta), fmt)
    pi = sc.weights()
    oracle = {
        StochasticAcceptability.ALMOST_SURE: lambda u, v: orders.almost_sure(u, v, 1e-6),
        StochasticAcceptability.FIRST_ORDER: lambda u, v: orders.first_order(u, v, pi, 1e-9, value_tol=1e-6),
        StochasticAcceptability.INCREASING_CONVEX: lambda u, v: orders.increasing_convex(u, v, pi, 1e-6),
        StochasticAcceptability.EXPECTATION: lambda u, v: orders.expectation(u, v, pi, 1e-6),
    }
    for k, op in enumerate(StochasticOperator):
        block = sols[k * len(chain) : (k + 1) * len(chain)]
        objs = [s.phase1_objective for s in block]
        poa = [x - objs[0] for x in objs]
        ok = all(poa[j] <= poa[j + 1] + 1e-6 * max(1.0, abs(objs[j + 1])) for j in range(len(poa) - 1))
        checks.add(f"stochastic PoA chain {op.value}", ok, f"objective increase {_fmt(poa)}", stochastic=True)
        violations = 0
        for s in block[1:]:
            f = oracle[s.acceptability]
            violations += sum(not f(s.costs[i], base.realizations[i]) for i in range(inst.n_agents))
        checks.add(f"stochastic order oracles {op.value}", violations == 0, f"{violations} violations", stochastic=True)
    for j, acc in enumerate(chain):
        us, ur = sols[j], sols[len(chain) + j]
        checks.add(
            f"UR >= US ({acc.value})",
            ur.phase1_objective >= us.phase1_objective - 1e-6,
            f"{ur.phase1_objective:.6g} >= {us.phase1_objective:.6g}",
            stochastic=True,
        )
    worst = 0.0
    for s in sols:
        worst = max(worst, abs((s.costs.sum(axis=0) @ pi) - (s.costs @ pi).sum()))
        ratios = s.costs / base.realizations
        worst = max(worst, abs(ratios.max(axis=0).max() - ratios.max(axis=1).max()))
    checks.add("composition identities", worst <= 1e-9, f"max deviation {worst:.3g}", stochastic=True)


# --- entry point -------------------------------------------------------------------


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    commands = {"solve": cmd_solve, "reproduce-paper": cmd_reproduce, "shapley": cmd_shapley}
    try:
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        return commands[args.command](args)
    except (ValidationError, InstanceError, ZeroBaseline) as exc:
        print(f"fairagg: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except UsageError as exc:
        print(f"fairagg: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CoalitionBudgetExceeded as exc:
        print(f"fairagg: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except NoStrictImprovement as exc:
        print(f"fairagg: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (MilpError, AggregationError) as exc:
        print(f"fairagg: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"fairagg: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
