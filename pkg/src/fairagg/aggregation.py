"""Deterministic prosumer and aggregator models.

Each prosumer buys ``qda`` on the day-ahead market and ``qb`` on the
balancing market per stage.  Day-ahead trading at a stage is only allowed
when the traded volume reaches ``w_min`` (binary ``u_t``); alone, an agent
whose ``e_max`` is below ``w_min`` can only use the balancing market.  The
aggregator pools agents so that the pooled volume can reach ``w_min``.

Selection among optima is done in phases:

1. optimize the fairness operator;
2. minimize total cost with the operator objective capped at its optimum + 1e-6;
3. minimize agent costs L^1, L^2, ... in turn, each capped at its optimum + 1e-6.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .instance import DeterministicInstance
from .milp import Expr, MipModel, SolverOptions, Status, require_optimal, solve

log = logging.getLogger(__name__)

PHASE_TOL = 1e-6
OA_GAP = 1e-6
OA_EPS = 1e-6
OA_MAX_ROUNDS = 200
STAGE_WEIGHT = 1e-4


class FairnessOperator(str, enum.Enum):
    UTILITARIAN = "utilitarian"
    PROPORTIONAL = "proportional"
    MINIMAX = "minimax"
    SCALED_MINIMAX = "scaled-minimax"

    @property
    def needs_baseline(self) -> bool:
        return self in (FairnessOperator.PROPORTIONAL, FairnessOperator.SCALED_MINIMAX)


class AcceptTag(str, enum.Enum):
    NONE = "none"
    STATIC = "static"
    STAGEWISE = "stagewise"
    PROGRESSIVE = "progressive"
    AVERAGE = "average"


@dataclass(frozen=True)
class AcceptabilityKind:
    tag: AcceptTag = AcceptTag.NONE
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tag", AcceptTag(self.tag))
        if self.tag is AcceptTag.STATIC and not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    @classmethod
    def none(cls) -> "AcceptabilityKind":
        return cls(AcceptTag.NONE)

    @classmethod
    def static(cls, alpha: float = 1.0) -> "AcceptabilityKind":
        return cls(AcceptTag.STATIC, float(alpha))

    @classmethod
    def stagewise(cls) -> "AcceptabilityKind":
        return cls(AcceptTag.STAGEWISE)

    @classmethod
    def progressive(cls) -> "AcceptabilityKind":
        return cls(AcceptTag.PROGRESSIVE)

    @classmethod
    def average(cls) -> "AcceptabilityKind":
        return cls(AcceptTag.AVERAGE)

    @property
    def is_dynamic(self) -> bool:
        return self.tag in (AcceptTag.STAGEWISE, AcceptTag.PROGRESSIVE, AcceptTag.AVERAGE)

    @property
    def label(self) -> str:
        if self.tag is AcceptTag.STATIC:
            return f"static({self.alpha:g})"
        return self.tag.value


class AggregationError(Exception):
    pass


class MissingBaseline(AggregationError):
    pass


class ZeroBaseline(AggregationError):
    def __init__(self, agent: int):
        super().__init__(f"agent {agent} has a zero independent cost; ratios to it are undefined")
        self.agent = agent


class InfeasibleBaseline(AggregationError):
    def __init__(self, agent: int):
        super().__init__(f"the independent problem of agent {agent} is infeasible")
        self.agent = agent


class NoStrictImprovement(AggregationError):
    """No feasible point lowers every agent's cost strictly below its baseline.

    ``allocation`` is the disagreement point (everyone keeps its independent plan).
    """

    def __init__(self, agent: int | None, allocation: "AggregateSolution"):
        who = f"agent {agent}" if agent is not None else "the agents jointly"
        super().__init__(f"no feasible aggregate plan strictly improves on the baseline for {who}")
        self.agent = agent
        self.allocation = allocation


@dataclass(frozen=True)
class Baseline:
    """Independent optimum per agent: totals ``v``, stage costs ``v_t`` and schedules."""

    v: np.ndarray
    v_t: np.ndarray
    qda: np.ndarray
    qb: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.v.size

    @property
    def total(self) -> float:
        return float(self.v.sum())


@dataclass(frozen=True)
class AggregateSolution:
    operator: FairnessOperator
    acceptability: AcceptabilityKind
    stage_costs: np.ndarray  # (N, T)
    qda: np.ndarray  # (N, T)
    qb: np.ndarray  # (N, T)
    u: np.ndarray  # (T,)
    objective: float
    phase1_objective: float
    oa_gap: float = 0.0

    @property
    def costs(self) -> np.ndarray:
        return self.stage_costs.sum(axis=1)

    @property
    def total(self) -> float:
        return float(self.stage_costs.sum())


@dataclass(frozen=True)
class PriceOfAcceptability:
    absolute: float
    percent: float


@dataclass
class Layout:
    """Variable ids of an aggregate (or single-prosumer) model."""

    qda: np.ndarray  # (n, T)
    qb: np.ndarray  # (n, T)
    u: np.ndarray  # (T,)
    p_da: np.ndarray
    p_bal: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return self.qda.shape[0]

    @property
    def horizon(self) -> int:
        return self.qda.shape[1]

    def stage_cost(self, k: int, t: int) -> Expr:
        return Expr({int(self.qda[k, t]): self.p_da[t], int(self.qb[k, t]): self.p_bal[t]})

    def cost(self, k: int) -> Expr:
        return Expr.sum(self.stage_cost(k, t) for t in range(self.horizon))

    def total(self) -> Expr:
        return Expr.sum(self.cost(k) for k in range(self.n_agents))


# --- model construction ------------------------------------------------------


def _build_core(instance: DeterministicInstance) -> tuple[MipModel, Layout]:
    """Feasible set shared by every deterministic model: demand rows and the volume rule."""
    mk = instance.market
    T, n = mk.horizon, instance.n_agents
    model = MipModel()
    qda = np.empty((n, T), dtype=np.int64)
    qb = np.empty((n, T), dtype=np.int64)
    for k, p in enumerate(instance.prosumers):
        for t in range(T):
            qda[k, t] = model.add_variable(0.0, p.e_max, name=f"qda_{k}_{t}")
            qb[k, t] = model.add_variable(0.0, p.e_max, name=f"qb_{k}_{t}")
    u = np.array([model.add_binary(name=f"u_{t}") for t in range(T)], dtype=np.int64)
    for k, p in enumerate(instance.prosumers):
        for t in range(T):
            row = {int(qda[k, t]): 1.0, int(qb[k, t]): 1.0}
            if p.e_min > 0:
                model.add_constraint(row, ">=", p.e_min, name=f"emin_{k}_{t}")
            model.add_constraint(row, "<=", p.e_max, name=f"emax_{k}_{t}")
        model.add_constraint(
            [(int(qda[k, t]), 1.0) for t in range(T)] + [(int(qb[k, t]), 1.0) for t in range(T)],
            ">=",
            p.e_total,
            name=f"etotal_{k}",
        )
    for t in range(T):
        pooled = [(int(qda[k, t]), 1.0) for k in range(n)]
        model.add_constraint(pooled + [(int(u[t]), -mk.w_min)], ">=", 0.0, name=f"wmin_{t}")
        model.add_constraint(pooled + [(int(u[t]), -mk.big_m_da)], "<=", 0.0, name=f"bigm_{t}")
    layout = Layout(qda, qb, u, instance.p_da, instance.p_bal)
    model.meta["layout"] = layout
    return model, layout


def build_prosumer_model(instance: DeterministicInstance, i: int) -> MipModel:
    """Agent ``i`` acting alone; its day-ahead bound is its own ``e_max``."""
    if not 0 <= i < instance.n_agents:
        raise IndexError(f"agent index {i} out of range")
    model, layout = _build_core(instance.subset([i]))
    model.set_objective(layout.cost(0))
    return model


def _options(options: SolverOptions | None) -> SolverOptions:
    return options if options is not None else SolverOptions()


def _clean(x: np.ndarray) -> np.ndarray:
    return np.where(np.abs(x) < 1e-9, 0.0, x)


def _solve_one_baseline(instance: DeterministicInstance, i: int, options: SolverOptions):
    model = build_prosumer_model(instance, i)
    sol = solve(model, options)
    if sol.status is Status.INFEASIBLE:
        raise InfeasibleBaseline(i)
    require_optimal(sol, f"independent problem of agent {i}")
    layout: Layout = model.meta["layout"]
    # Tie-break among optima: prefer cost incurred early.
    model.add_constraint(layout.cost(0), "<=", sol.objective_value + PHASE_TOL)
    model.set_objective(
        Expr.sum((1.0 + (t + 1) * STAGE_WEIGHT) * layout.stage_cost(0, t) for t in range(layout.horizon))
    )
    sol = require_optimal(solve(model, options), f"tie-break for agent {i}")
    qda = _clean(sol.values[layout.qda[0]])
    qb = _clean(sol.values[layout.qb[0]])
    return qda, qb


def solve_independent(
    instance: DeterministicInstance, options: SolverOptions | None = None, jobs: int = 1
) -> Baseline:
    """Solve every agent's stand-alone problem and return the baseline costs."""
    options = _options(options)
    agents = range(instance.n_agents)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            plans = list(pool.map(lambda i: _solve_one_baseline(instance, i, options), agents))
    else:
        plans = [_solve_one_baseline(instance, i, options) for i in agents]
    qda = np.array([p[0] for p in plans])
    qb = np.array([p[1] for p in plans])
    v_t = qda * instance.p_da + qb * instance.p_bal
    return Baseline(v_t.sum(axis=1), v_t, qda, qb)


def _check_baseline(operator: FairnessOperator, acceptability: AcceptabilityKind, baseline, n: int):
    needs = operator.needs_baseline or acceptability.tag is not AcceptTag.NONE
    if needs and baseline is None:
        raise MissingBaseline(f"operator {operator.value} with acceptability {acceptability.label} needs a baseline")
    if baseline is not None and baseline.n_agents != n:
        raise ValueError(f"baseline has {baseline.n_agents} agents, instance has {n}")
    if operator.needs_baseline:
        for i, vi in enumerate(baseline.v):
            if vi <= 0:
                raise ZeroBaseline(i)


def add_dynamic_acceptability(model: MipModel, kind: AcceptabilityKind, baseline: Baseline) -> None:
    """Append stage-wise, progressive or average acceptability rows."""
    layout: Layout = model.meta["layout"]
    T = layout.horizon
    for k in range(layout.n_agents):
        if kind.tag is AcceptTag.AVERAGE:
            model.add_constraint(layout.cost(k), "<=", float(baseline.v_t[k].sum()), name=f"acc_av_{k}")
        elif kind.tag is AcceptTag.STAGEWISE:
            for t in range(T):
                model.add_constraint(layout.stage_cost(k, t), "<=", float(baseline.v_t[k, t]), name=f"acc_s_{k}_{t}")
        elif kind.tag is AcceptTag.PROGRESSIVE:
            running = Expr()
            for t in range(T):
                running = running + layout.stage_cost(k, t)
                model.add_constraint(running, "<=", float(baseline.v_t[k, : t + 1].sum()), name=f"acc_p_{k}_{t}")
        else:
            raise ValueError(f"{kind.label} is not a dynamic acceptability kind")


def build_aggregate_model(
    instance: DeterministicInstance,
    operator: FairnessOperator,
    acceptability: AcceptabilityKind,
    baseline: Baseline | None = None,
) -> MipModel:
    """Joint model over all agents with acceptability rows and the operator objective.

    For Proportional the objective is ``-sum(theta_i)`` with ``theta_i`` bounded
    in ``[log eps, log v_i]``; tangent cuts are added by ``solve_proportional``.
    ``model.meta["fair"]`` holds the minimized operator expression.
    """
    operator = FairnessOperator(operator)
    _check_baseline(operator, acceptability, baseline, instance.n_agents)
    model, layout = _build_core(instance)
    n = instance.n_agents
    if acceptability.tag is AcceptTag.STATIC:
        for k in range(n):
            model.add_constraint(layout.cost(k), "<=", acceptability.alpha * float(baseline.v[k]), name=f"acc_{k}")
    elif acceptability.is_dynamic:
        add_dynamic_acceptability(model, acceptability, baseline)

    if operator is FairnessOperator.UTILITARIAN:
        fair = layout.total()
    elif operator is FairnessOperator.MINIMAX:
        z = model.add_variable(0.0, math.inf, name="z")
        for k in range(n):
            model.add_constraint(layout.cost(k) - Expr.var(z), "<=", 0.0, name=f"mm_{k}")
        fair = Expr.var(z)
        layout.extra["epigraph"] = z
    elif operator is FairnessOperator.SCALED_MINIMAX:
        tau = model.add_variable(0.0, math.inf, name="tau")
        for k in range(n):
            model.add_constraint(layout.cost(k) / float(baseline.v[k]) - Expr.var(tau), "<=", 0.0, name=f"sm_{k}")
        fair = Expr.var(tau)
        layout.extra["epigraph"] = tau
    else:
        theta = []
        for k in range(n):
            vk = float(baseline.v[k])
            theta.append(model.add_variable(math.log(OA_EPS), math.log(vk), name=f"theta_{k}"))
            model.add_constraint(layout.cost(k), "<=", vk - OA_EPS, name=f"guard_{k}")
        fair = -Expr.sum(Expr.var(j) for j in theta)
        layout.extra["theta"] = theta
    model.set_objective(fair)
    model.meta["fair"] = fair
    model.meta["operator"] = operator
    return model


# --- evaluation --------------------------------------------------------------


def operator_value(operator: FairnessOperator, costs: np.ndarray, v: np.ndarray | None) -> float:
    """Operator objective at given agent costs (Proportional is the log-sum to maximize)."""
    costs = np.asarray(costs, dtype=float)
    if operator is FairnessOperator.UTILITARIAN:
        return float(costs.sum())
    if operator is FairnessOperator.MINIMAX:
        return float(costs.max())
    if operator is FairnessOperator.SCALED_MINIMAX:
        return float((costs / v).max())
    d = np.asarray(v) - costs
    return float(np.sum(np.log(d))) if np.all(d > 0) else -math.inf


def _extract(model: MipModel, x: np.ndarray, operator, acceptability, v, phase1, gap=0.0) -> AggregateSolution:
    layout: Layout = model.meta["layout"]
    qda = _clean(x[layout.qda])
    qb = _clean(x[layout.qb])
    u = np.round(x[layout.u])
    stage = qda * layout.p_da + qb * layout.p_bal
    return AggregateSolution(
        operator,
        acceptability,
        stage,
        qda,
        qb,
        u,
        operator_value(operator, stage.sum(axis=1), v),
        phase1,
        gap,
    )


def disagreement_solution(
    instance: DeterministicInstance, baseline: Baseline, operator: FairnessOperator, acceptability: AcceptabilityKind
) -> AggregateSolution:
    """Everyone keeps its independent plan (always feasible for the joint model)."""
    u = (baseline.qda.sum(axis=0) > 0).astype(float)
    value = operator_value(operator, baseline.v, baseline.v)
    return AggregateSolution(
        operator, acceptability, baseline.v_t.copy(), baseline.qda.copy(), baseline.qb.copy(), u, value, value
    )


def price_of_acceptability(value_without: float, value_with: float) -> PriceOfAcceptability:
    """Cost increase caused by acceptability, in $ and in % of ``value_without``."""
    diff = float(value_with) - float(value_without)
    pct = 100.0 * diff / float(value_without) if value_without != 0 else math.nan
    return PriceOfAcceptability(diff, pct)


# --- selection phases ----------------------------------------------------------


def _lexmin_agents(model: MipModel, solve_fn) -> np.ndarray:
    """Minimize L^1, then L^2, ... each capped at its optimum + PHASE_TOL."""
    layout: Layout = model.meta["layout"]
    x = None
    for k in range(layout.n_agents):
        model.set_objective(layout.cost(k))
        value, x = solve_fn(model, f"agent tie-break {k}")
        model.add_constraint(layout.cost(k), "<=", value + PHASE_TOL, name=f"lex_{k}")
    return x


def _plain_solve(options: SolverOptions):
    def run(model: MipModel, what: str):
        sol = require_optimal(solve(model, options), what)
        return sol.objective_value, sol.values

    return run


def solve_aggregate(
    instance: DeterministicInstance,
    operator: FairnessOperator,
    acceptability: AcceptabilityKind | None = None,
    baseline: Baseline | None = None,
    options: SolverOptions | None = None,
) -> AggregateSolution:
    """Optimize ``operator`` and return the tie-broken solution."""
    operator = FairnessOperator(operator)
    acceptability = acceptability or AcceptabilityKind.none()
    options = _options(options)
    if operator is FairnessOperator.PROPORTIONAL:
        return solve_proportional(instance, acceptability, baseline, options)
    model = build_aggregate_model(instance, operator, acceptability, baseline)
    sol = require_optimal(solve(model, options), f"{operator.value} aggregate model")
    return lexicographic_select(instance, operator, acceptability, baseline, sol.objective_value, options)


def lexicographic_select(
    instance: DeterministicInstance,
    operator: FairnessOperator,
    acceptability: AcceptabilityKind,
    baseline: Baseline | None,
    phase1_value: float,
    options: SolverOptions | None = None,
) -> AggregateSolution:
    """Among points within 1e-6 of ``phase1_value``, minimize total cost, then agent costs in order.

    For Proportional, ``phase1_value`` is the maximized log-sum.
    """
    operator = FairnessOperator(operator)
    options = _options(options)
    if operator is FairnessOperator.PROPORTIONAL:
        return _proportional_select(instance, acceptability, baseline, phase1_value, options)
    model = build_aggregate_model(instance, operator, acceptability, baseline)
    layout: Layout = model.meta["layout"]
    model.add_constraint(model.meta["fair"], "<=", phase1_value + PHASE_TOL, name="phase1_cap")
    run = _plain_solve(options)
    model.set_objective(layout.total())
    total, x = run(model, "total-cost selection")
    model.add_constraint(layout.total(), "<=", total + PHASE_TOL, name="phase2_cap")
    x = _lexmin_agents(model, run)
    v = baseline.v if baseline is not None else None
    return _extract(model, x, operator, acceptability, v, phase1_value)


# --- proportional (outer approximation) ----------------------------------------


def _tangent_cut(model: MipModel, layout: Layout, k: int, vk: float, d_hat: float) -> None:
    # theta <= log(d_hat) + (d - d_hat)/d_hat with d = v - L
    theta = layout.extra["theta"][k]
    expr = Expr.var(theta) + layout.cost(k) / d_hat
    model.add_constraint(expr, "<=", math.log(d_hat) + vk / d_hat - 1.0, name=f"oa_{k}")


def _add_cuts(model: MipModel, x: np.ndarray, v: np.ndarray, force: bool = False) -> int:
    layout: Layout = model.meta["layout"]
    added = 0
    for k, j in enumerate(layout.extra["theta"]):
        d = max(float(v[k]) - layout.cost(k).value(x), OA_EPS)
        if force or x[j] > math.log(d) + 1e-12:
            _tangent_cut(model, layout, k, float(v[k]), d)
            added += 1
    return added


def _log_sum(model: MipModel, x: np.ndarray, v: np.ndarray) -> float:
    layout: Layout = model.meta["layout"]
    d = np.array([float(v[k]) - layout.cost(k).value(x) for k in range(layout.n_agents)])
    return float(np.sum(np.log(np.maximum(d, OA_EPS))))


def _prepare_proportional(instance, acceptability, baseline, options) -> MipModel:
    model = build_aggregate_model(instance, FairnessOperator.PROPORTIONAL, acceptability, baseline)
    layout: Layout = model.meta["layout"]
    for k in range(instance.n_agents):
        vk = float(baseline.v[k])
        _tangent_cut(model, layout, k, vk, vk / 2.0)
    sol = solve(model, options)
    if sol.status is Status.INFEASIBLE:
        _raise_no_improvement(instance, acceptability, baseline, options)
    return model


def _raise_no_improvement(instance, acceptability, baseline, options):
    culprit = None
    for k in range(instance.n_agents):
        probe = build_aggregate_model(instance, FairnessOperator.UTILITARIAN, acceptability, baseline)
        layout: Layout = probe.meta["layout"]
        probe.set_objective(layout.cost(k))
        sol = solve(probe, options)
        if not sol.ok or sol.objective_value > float(baseline.v[k]) - OA_EPS:
            culprit = k
            break
    disagreement = disagreement_solution(instance, baseline, FairnessOperator.PROPORTIONAL, acceptability)
    raise NoStrictImprovement(culprit, disagreement)


def _oa_constrained(options: SolverOptions, v: np.ndarray, floor_row: int, floor: float, max_rounds: int):
    """Solver callback: minimize a linear objective subject to log-sum >= floor via cuts.

    A point is accepted at ``floor - OA_GAP``; the floor then drops by
    ``OA_GAP`` so that the accepted point stays feasible for later phases.
    """
    state = {"floor": floor}

    def run(model: MipModel, what: str):
        model.rows[floor_row].rhs = -state["floor"]
        for _ in range(max_rounds):
            sol = require_optimal(solve(model, options), what)
            if _log_sum(model, sol.values, v) >= state["floor"] - OA_GAP:
                break
            _add_cuts(model, sol.values, v)
        else:
            log.warning("%s: cut limit reached; log-sum constraint may be violated by more than %g", what, OA_GAP)
        state["floor"] -= OA_GAP
        return sol.objective_value, sol.values

    return run


def solve_proportional(
    instance: DeterministicInstance,
    acceptability: AcceptabilityKind | None,
    baseline: Baseline | None,
    options: SolverOptions | None = None,
    max_rounds: int = OA_MAX_ROUNDS,
) -> AggregateSolution:
    """Maximize sum_i log(v_i - L_i) by outer approximation, then tie-break."""
    acceptability = acceptability or AcceptabilityKind.none()
    options = _options(options)
    _check_baseline(FairnessOperator.PROPORTIONAL, acceptability, baseline, instance.n_agents)
    model = _prepare_proportional(instance, acceptability, baseline, options)
    v = baseline.v
    best = -math.inf
    gap = math.inf
    for rnd in range(max_rounds):
        sol = require_optimal(solve(model, options), "proportional master")
        bound = -sol.objective_value
        best = max(best, _log_sum(model, sol.values, v))
        gap = bound - best
        if gap <= OA_GAP:
            break
        _add_cuts(model, sol.values, v)
    else:
        log.warning("proportional: %d cut rounds reached with gap %.3g", max_rounds, gap)
    return _proportional_select(instance, acceptability, baseline, best, options, model, max(gap, 0.0), max_rounds)


def _proportional_select(
    instance, acceptability, baseline, phase1_value, options, model=None, gap=0.0, max_rounds=OA_MAX_ROUNDS
) -> AggregateSolution:
    if model is None:
        model = _prepare_proportional(instance, acceptability, baseline, options)
    layout: Layout = model.meta["layout"]
    v = baseline.v
    floor = phase1_value - PHASE_TOL
    row = model.add_constraint(model.meta["fair"], "<=", -floor, name="phase1_cap")
    run = _oa_constrained(options, v, row, floor, max_rounds)
    model.set_objective(layout.total())
    total, x = run(model, "proportional total-cost selection")
    model.add_constraint(layout.total(), "<=", total + PHASE_TOL, name="phase2_cap")
    x = _lexmin_agents(model, run)
    return _extract(model, x, FairnessOperator.PROPORTIONAL, acceptability, v, phase1_value, gap)
