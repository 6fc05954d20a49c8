"""Two-stage stochastic aggregation over a finite scenario set.

Day-ahead purchases and the binaries ``u_t`` are first-stage decisions
shared by all scenarios; balancing purchases are chosen per scenario once
the balancing prices are known.  Agent ``i`` pays in scenario ``w``::

    U[i, w] = sum_t p_da[t] * qda[i, t] + sum_t p_bal[w, t] * qb[i, w, t]
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aggregation import (
    PHASE_TOL,
    STAGE_WEIGHT,
    InfeasibleBaseline,
    MissingBaseline,
    ZeroBaseline,
)
from .instance import DeterministicInstance, ScenarioSet, StochasticInstance
from .milp import Expr, MipModel, SolverOptions, Status, require_optimal, solve

log = logging.getLogger(__name__)

GENERATOR = "numpy.PCG64"
PRICE_LOW = 0.35
PRICE_HIGH = 5.0


class RiskMeasure(str, enum.Enum):
    EXPECTATION = "expectation"
    WORST_CASE = "worst-case"


class StochasticOperator(str, enum.Enum):
    US = "us"  # expected total cost
    UR = "ur"  # worst-case total cost
    SMS = "sms"  # worst expected cost ratio
    SMR = "smr"  # worst ratio over agents and scenarios

    @property
    def needs_baseline(self) -> bool:
        return self in (StochasticOperator.SMS, StochasticOperator.SMR)


class StochasticAcceptability(str, enum.Enum):
    NONE = "none"
    EXPECTATION = "expectation"
    INCREASING_CONVEX = "ic"
    FIRST_ORDER = "first-order"
    ALMOST_SURE = "almost-sure"


def sample_balancing_prices(p_da: Sequence[float], n: int, seed: int) -> ScenarioSet:
    """Draw ``n`` price paths, each entry uniform on [0.35, 5] x the day-ahead price."""
    p_da = np.asarray(p_da, dtype=float)
    if n < 1:
        raise ValueError("n must be >= 1")
    if np.any(p_da <= 0):
        raise ValueError("day-ahead prices must be positive to define the sampling range")
    rng = np.random.Generator(np.random.PCG64(seed))
    prices = rng.uniform(PRICE_LOW * p_da, PRICE_HIGH * p_da, size=(n, p_da.size))
    rows = tuple(tuple(float(x) for x in row) for row in prices)
    return ScenarioSet(rows, tuple([1.0 / n] * n), int(seed), GENERATOR)


@dataclass(frozen=True)
class StochasticBaseline:
    """Stand-alone cost realizations ``realizations[i, w]`` and schedules."""

    realizations: np.ndarray  # (N, W)
    probabilities: np.ndarray  # (W,)
    qda: np.ndarray  # (N, T)
    qb: np.ndarray  # (N, W, T)
    risk: RiskMeasure

    @property
    def n_agents(self) -> int:
        return self.realizations.shape[0]

    @property
    def expectation(self) -> np.ndarray:
        return self.realizations @ self.probabilities

    @property
    def worst_case(self) -> np.ndarray:
        return self.realizations.max(axis=1)


@dataclass(frozen=True)
class StochasticSolution:
    operator: StochasticOperator
    acceptability: StochasticAcceptability
    qda: np.ndarray  # (N, T), shared by all scenarios
    qb: np.ndarray  # (N, W, T)
    u: np.ndarray  # (T,)
    costs: np.ndarray  # (N, W)
    probabilities: np.ndarray
    objective: float
    phase1_objective: float

    @property
    def expected(self) -> np.ndarray:
        return self.costs @ self.probabilities

    @property
    def worst(self) -> np.ndarray:
        return self.costs.max(axis=1)

    @property
    def expected_total(self) -> float:
        return float(self.expected.sum())

    @property
    def worst_total(self) -> float:
        return float(self.costs.sum(axis=0).max())


@dataclass
class StochasticLayout:
    qda: np.ndarray  # (n, T)
    qb: np.ndarray  # (n, W, T)
    u: np.ndarray  # (T,)
    p_da: np.ndarray
    prices: np.ndarray  # (W, T)
    probabilities: np.ndarray
    e_max: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.qda.shape[0]

    @property
    def n_scenarios(self) -> int:
        return self.qb.shape[1]

    @property
    def horizon(self) -> int:
        return self.qda.shape[1]

    def stage_cost(self, k: int, w: int, t: int) -> Expr:
        return Expr({int(self.qda[k, t]): self.p_da[t], int(self.qb[k, w, t]): self.prices[w, t]})

    def cost(self, k: int, w: int) -> Expr:
        return Expr.sum(self.stage_cost(k, w, t) for t in range(self.horizon))

    def expected_cost(self, k: int) -> Expr:
        return Expr.sum(float(p) * self.cost(k, w) for w, p in enumerate(self.probabilities))

    def expected_total(self) -> Expr:
        return Expr.sum(self.expected_cost(k) for k in range(self.n_agents))

    def cost_upper_bound(self, k: int, w: int) -> float:
        """Largest cost agent ``k`` can incur in scenario ``w`` (every stage at ``e_max``, dearer market)."""
        return float(np.sum(np.maximum(self.p_da, self.prices[w]) * self.e_max[k]))


def _build_core(base: DeterministicInstance, scenarios: ScenarioSet) -> tuple[MipModel, StochasticLayout]:
    mk = base.market
    T, n, W = mk.horizon, base.n_agents, scenarios.n_scenarios
    model = MipModel()
    qda = np.empty((n, T), dtype=np.int64)
    qb = np.empty((n, W, T), dtype=np.int64)
    for k, p in enumerate(base.prosumers):
        for t in range(T):
            qda[k, t] = model.add_variable(0.0, p.e_max, name=f"qda_{k}_{t}")
        for w in range(W):
            for t in range(T):
                qb[k, w, t] = model.add_variable(0.0, p.e_max, name=f"qb_{k}_{w}_{t}")
    u = np.array([model.add_binary(name=f"u_{t}") for t in range(T)], dtype=np.int64)
    for k, p in enumerate(base.prosumers):
        for w in range(W):
            for t in range(T):
                row = {int(qda[k, t]): 1.0, int(qb[k, w, t]): 1.0}
                if p.e_min > 0:
                    model.add_constraint(row, ">=", p.e_min)
                model.add_constraint(row, "<=", p.e_max)
            model.add_constraint(
                [(int(qda[k, t]), 1.0) for t in range(T)] + [(int(qb[k, w, t]), 1.0) for t in range(T)],
                ">=",
                p.e_total,
            )
    for t in range(T):
        pooled = [(int(qda[k, t]), 1.0) for k in range(n)]
        model.add_constraint(pooled + [(int(u[t]), -mk.w_min)], ">=", 0.0)
        model.add_constraint(pooled + [(int(u[t]), -mk.big_m_da)], "<=", 0.0)
    layout = StochasticLayout(
        qda,
        qb,
        u,
        base.p_da,
        scenarios.price_matrix(),
        scenarios.weights(),
        np.array([p.e_max for p in base.prosumers]),
    )
    model.meta["layout"] = layout
    return model, layout


def _clean(x: np.ndarray) -> np.ndarray:
    return np.where(np.abs(x) < 1e-9, 0.0, x)


def _realized_costs(layout: StochasticLayout, qda: np.ndarray, qb: np.ndarray) -> np.ndarray:
    first = qda @ layout.p_da  # (n,)
    second = np.einsum("kwt,wt->kw", qb, layout.prices)
    return first[:, None] + second


def _tiebreak_objective(layout: StochasticLayout, k: int) -> Expr:
    weights = 1.0 + STAGE_WEIGHT * np.arange(1, layout.horizon + 1)
    return Expr.sum(
        float(p) * float(weights[t]) * layout.stage_cost(k, w, t)
        for w, p in enumerate(layout.probabilities)
        for t in range(layout.horizon)
    )


def _solve_one_baseline(instance: StochasticInstance, i: int, risk: RiskMeasure, options: SolverOptions):
    model, layout = _build_core(instance.base.subset([i]), instance.scenario_set)
    if risk is RiskMeasure.EXPECTATION:
        obj = layout.expected_cost(0)
    else:
        z = model.add_variable(0.0, math.inf, name="z")
        for w in range(layout.n_scenarios):
            model.add_constraint(layout.cost(0, w) - Expr.var(z), "<=", 0.0)
        obj = Expr.var(z)
    model.set_objective(obj)
    sol = solve(model, options)
    if sol.status is Status.INFEASIBLE:
        raise InfeasibleBaseline(i)
    require_optimal(sol, f"stochastic independent problem of agent {i}")
    model.add_constraint(obj, "<=", sol.objective_value + PHASE_TOL)
    model.set_objective(_tiebreak_objective(layout, 0))
    sol = require_optimal(solve(model, options), f"tie-break for agent {i}")
    qda = _clean(sol.values[layout.qda[0]])
    qb = _clean(sol.values[layout.qb[0]])
    return qda, qb


def solve_stochastic_baseline(
    instance: StochasticInstance,
    risk: RiskMeasure = RiskMeasure.EXPECTATION,
    options: SolverOptions | None = None,
    jobs: int = 1,
) -> StochasticBaseline:
    """Each agent alone, minimizing the expectation or the worst case of its cost."""
    risk = RiskMeasure(risk)
    options = options or SolverOptions()
    agents = range(instance.n_agents)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            plans = list(pool.map(lambda i: _solve_one_baseline(instance, i, risk, options), agents))
    else:
        plans = [_solve_one_baseline(instance, i, risk, options) for i in agents]
    qda = np.array([p[0] for p in plans])
    qb = np.array([p[1] for p in plans])
    sc = instance.scenario_set
    prices = sc.price_matrix()
    real = (qda @ instance.base.p_da)[:, None] + np.einsum("kwt,wt->kw", qb, prices)
    return StochasticBaseline(real, sc.weights(), qda, qb, risk)


# --- acceptability encodings --------------------------------------------------


def _probabilities(baseline: StochasticBaseline) -> np.ndarray:
    return np.asarray(baseline.probabilities, dtype=float)


def encode_expectation_acceptability(model: MipModel, U_vars: Sequence[Expr], baseline: StochasticBaseline, i: int):
    """``E[U_i] <= E[v_i]``."""
    pi = _probabilities(baseline)
    expr = Expr.sum(float(p) * U for U, p in zip(U_vars, pi))
    model.add_constraint(expr, "<=", float(baseline.realizations[i] @ pi), name=f"accE_{i}")


def encode_almost_sure(model: MipModel, U_vars: Sequence[Expr], baseline: StochasticBaseline, i: int):
    """``U_i <= v_i`` scenario by scenario."""
    for w, U in enumerate(U_vars):
        model.add_constraint(U, "<=", float(baseline.realizations[i, w]), name=f"accAS_{i}_{w}")


def encode_increasing_convex(model: MipModel, U_vars: Sequence[Expr], baseline: StochasticBaseline, i: int):
    """``E[(U_i - eta)+] <= E[(v_i - eta)+]`` at every baseline realization ``eta``.

    Uses shortfall variables ``s[w, h] >= U_w - v_h``, ``s >= 0``.
    """
    pi = _probabilities(baseline)
    vbar = baseline.realizations[i]
    for h, eta in enumerate(vbar):
        cap = float(np.sum(pi * np.maximum(vbar - eta, 0.0)))
        total = Expr()
        for w, U in enumerate(U_vars):
            s = model.add_variable(0.0, math.inf, name=f"s_{i}_{w}_{h}")
            model.add_constraint(U - Expr.var(s), "<=", float(eta))
            total = total + float(pi[w]) * Expr.var(s)
        model.add_constraint(total, "<=", cap, name=f"accIC_{i}_{h}")


def _expr_upper_bound(model: MipModel, expr: Expr) -> float:
    ub = expr.constant
    for j, a in expr.terms.items():
        ub += a * (model.ub[j] if a > 0 else model.lb[j])
    return ub


def encode_first_order(
    model: MipModel,
    U_vars: Sequence[Expr],
    baseline: StochasticBaseline,
    i: int,
    upper_bounds: Sequence[float] | None = None,
):
    """``P(U_i > eta) <= P(v_i > eta)`` at every baseline realization ``eta``.

    Binary ``b[w, h]`` may be 0 only if ``U_w <= v_h``, via
    ``U_w - v_h <= M[w, h] * b[w, h]`` with ``M[w, h] = UB_w - v_h``.  ``UB_w``
    defaults to the bound implied by variable bounds.  Pairs with
    ``M <= 0`` can never exceed and get no binary.
    """
    pi = _probabilities(baseline)
    vbar = baseline.realizations[i]
    if upper_bounds is None:
        upper_bounds = [_expr_upper_bound(model, U) for U in U_vars]
    binaries = {}
    for h, eta in enumerate(vbar):
        cap = float(np.sum(pi[vbar > eta]))
        total = Expr()
        for w, U in enumerate(U_vars):
            big_m = float(upper_bounds[w]) - float(eta)
            if big_m <= 0:
                continue
            b = model.add_binary(name=f"b_{i}_{w}_{h}")
            binaries[w, h] = b
            model.add_constraint(U - big_m * Expr.var(b), "<=", float(eta))
            total = total + float(pi[w]) * Expr.var(b)
        if total.terms:
            model.add_constraint(total, "<=", cap, name=f"acc1_{i}_{h}")
    return binaries


def strengthen_first_order(
    model: MipModel, U_vars: Sequence[Expr], baseline: StochasticBaseline, i: int, binaries: dict
) -> None:
    """Rows implied by first-order dominance that tighten the LP relaxation.

    * If ``U_w`` exceeds a threshold it exceeds every lower one, so
      ``b[w, h] <= b[w, g]`` whenever ``v_g < v_h``.  Replacing ``b`` by exact
      exceedance indicators keeps any feasible point feasible.
    * First-order dominance implies increasing-convex dominance, whose
      encoding has no binaries.

    Neither changes the set of feasible costs ``U``.
    """
    vbar = baseline.realizations[i]
    order = np.argsort(vbar, kind="stable")
    for w in range(len(U_vars)):
        prev = None
        for h in order:
            b = binaries.get((w, int(h)))
            if b is None:
                continue
            if prev is not None and vbar[prev] < vbar[h]:
                model.add_constraint({b: 1.0, binaries[w, prev]: -1.0}, "<=", 0.0)
            prev = int(h)
    encode_increasing_convex(model, U_vars, baseline, i)


# --- aggregate model ------------------------------------------------------------


def build_stochastic_aggregate(
    instance: StochasticInstance,
    operator: StochasticOperator,
    acceptability: StochasticAcceptability = StochasticAcceptability.NONE,
    baseline: StochasticBaseline | None = None,
) -> MipModel:
    operator = StochasticOperator(operator)
    acceptability = StochasticAcceptability(acceptability)
    n = instance.n_agents
    if (operator.needs_baseline or acceptability is not StochasticAcceptability.NONE) and baseline is None:
        raise MissingBaseline(f"operator {operator.value} with acceptability {acceptability.value} needs a baseline")
    if baseline is not None and baseline.realizations.shape != (n, instance.scenario_set.n_scenarios):
        raise ValueError("baseline does not match the instance's agents and scenarios")
    if operator is StochasticOperator.SMS:
        for k, e in enumerate(baseline.expectation):
            if e <= 0:
                raise ZeroBaseline(k)
    if operator is StochasticOperator.SMR:
        for k in range(n):
            if np.any(baseline.realizations[k] <= 0):
                raise ZeroBaseline(k)

    model, layout = _build_core(instance.base, instance.scenario_set)
    W = layout.n_scenarios

    if acceptability is not StochasticAcceptability.NONE:
        for k in range(n):
            U = [layout.cost(k, w) for w in range(W)]
            if acceptability is StochasticAcceptability.EXPECTATION:
                encode_expectation_acceptability(model, U, baseline, k)
            elif acceptability is StochasticAcceptability.INCREASING_CONVEX:
                encode_increasing_convex(model, U, baseline, k)
            elif acceptability is StochasticAcceptability.FIRST_ORDER:
                ub = [layout.cost_upper_bound(k, w) for w in range(W)]
                binaries = encode_first_order(model, U, baseline, k, ub)
                strengthen_first_order(model, U, baseline, k, binaries)
            else:
                encode_almost_sure(model, U, baseline, k)

    if operator is StochasticOperator.US:
        fair = layout.expected_total()
    elif operator is StochasticOperator.UR:
        z = model.add_variable(0.0, math.inf, name="z")
        for w in range(W):
            model.add_constraint(Expr.sum(layout.cost(k, w) for k in range(n)) - Expr.var(z), "<=", 0.0)
        fair = Expr.var(z)
    elif operator is StochasticOperator.SMS:
        tau = model.add_variable(0.0, math.inf, name="tau")
        ev = baseline.expectation
        for k in range(n):
            model.add_constraint(layout.expected_cost(k) / float(ev[k]) - Expr.var(tau), "<=", 0.0)
        fair = Expr.var(tau)
    else:
        tau = model.add_variable(0.0, math.inf, name="tau")
        for k in range(n):
            for w in range(W):
                vb = float(baseline.realizations[k, w])
                model.add_constraint(layout.cost(k, w) / vb - Expr.var(tau), "<=", 0.0)
        fair = Expr.var(tau)
    model.set_objective(fair)
    model.meta["fair"] = fair
    model.meta["operator"] = operator
    return model


def stochastic_operator_value(operator: StochasticOperator, costs: np.ndarray, pi: np.ndarray, baseline=None) -> float:
    """Operator objective evaluated on a cost matrix ``costs[i, w]``."""
    if operator is StochasticOperator.US:
        return float((costs @ pi).sum())
    if operator is StochasticOperator.UR:
        return float(costs.sum(axis=0).max())
    if operator is StochasticOperator.SMS:
        return float(((costs @ pi) / baseline.expectation).max())
    return float((costs / baseline.realizations).max())


def solve_stochastic(
    instance: StochasticInstance,
    operator: StochasticOperator,
    acceptability: StochasticAcceptability = StochasticAcceptability.NONE,
    baseline: StochasticBaseline | None = None,
    options: SolverOptions | None = None,
    agent_tiebreak: bool = False,
) -> StochasticSolution:
    """Optimize the operator, then minimize the expected total cost among optima.

    ``agent_tiebreak`` additionally minimizes expected agent costs in index order.
    """
    operator = StochasticOperator(operator)
    acceptability = StochasticAcceptability(acceptability)
    options = options or SolverOptions()
    model = build_stochastic_aggregate(instance, operator, acceptability, baseline)
    layout: StochasticLayout = model.meta["layout"]
    what = f"stochastic {operator.value}/{acceptability.value}"
    sol = require_optimal(solve(model, options), what)
    phase1 = sol.objective_value
    x = sol.values
    if operator is not StochasticOperator.US or agent_tiebreak:
        model.add_constraint(model.meta["fair"], "<=", phase1 + PHASE_TOL)
        if operator is not StochasticOperator.US:
            model.set_objective(layout.expected_total())
            sol = require_optimal(solve(model, options), what + " total-cost selection")
            x = sol.values
        if agent_tiebreak:
            model.add_constraint(layout.expected_total(), "<=", layout.expected_total().value(x) + PHASE_TOL)
            for k in range(layout.n_agents):
                model.set_objective(layout.expected_cost(k))
                sol = require_optimal(solve(model, options), what + f" agent tie-break {k}")
                x = sol.values
                model.add_constraint(layout.expected_cost(k), "<=", sol.objective_value + PHASE_TOL)
    qda = _clean(x[layout.qda])
    qb = _clean(x[layout.qb])
    u = np.round(x[layout.u])
    costs = _realized_costs(layout, qda, qb)
    value = stochastic_operator_value(operator, costs, layout.probabilities, baseline)
    return StochasticSolution(operator, acceptability, qda, qb, u, costs, layout.probabilities, value, phase1)
