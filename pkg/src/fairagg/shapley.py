"""Shapley post-allocation of the aggregation gains.

A coalition ``S`` solves the utilitarian aggregate model over its members
with each member's cost capped at its stand-alone cost.  Its worth is the
saving ``w(S) = sum_{i in S} v_i - c_S``; agent ``i`` receives

    phi_i = sum_{S not containing i} |S|! (n - |S| - 1)! / n! * (w(S + i) - w(S)).

Coalitions are indexed by bitmask (bit ``i`` set means agent ``i`` is in).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import comb
from typing import Iterable

import numpy as np

from .aggregation import AcceptabilityKind, Baseline, FairnessOperator, build_aggregate_model, solve_independent
from .instance import DeterministicInstance
from .milp import SolverOptions, require_optimal, solve
from .report import Table

DEFAULT_BUDGET = 2**20 - 1


class CoalitionBudgetExceeded(Exception):
    def __init__(self, needed: int, budget: int):
        super().__init__(f"{needed} coalition solves needed, budget is {budget}")
        self.needed = needed
        self.budget = budget


def members(mask: int) -> tuple[int, ...]:
    return tuple(i for i in range(mask.bit_length()) if mask >> i & 1)


def coalition_label(mask: int) -> str:
    return "{" + ",".join(f"A{i + 1}" for i in members(mask)) + "}"


def coalition_cost(
    instance: DeterministicInstance,
    coalition: Iterable[int],
    baseline: Baseline | None = None,
    options: SolverOptions | None = None,
) -> float:
    """Optimal utilitarian cost of ``coalition`` with each member no worse off than alone."""
    agents = sorted(set(coalition))
    if not agents:
        raise ValueError("coalition must be nonempty")
    if baseline is None:
        baseline = solve_independent(instance, options)
    sub = instance.subset(agents)
    sub_base = Baseline(baseline.v[agents], baseline.v_t[agents], baseline.qda[agents], baseline.qb[agents])
    model = build_aggregate_model(sub, FairnessOperator.UTILITARIAN, AcceptabilityKind.static(1.0), sub_base)
    sol = require_optimal(solve(model, options or SolverOptions()), f"coalition {coalition_label(sum(1 << i for i in agents))}")
    return float(sol.objective_value)


@dataclass(frozen=True)
class CoalitionTable:
    n_agents: int
    cost: np.ndarray  # indexed by mask; cost[0] = 0
    worth: np.ndarray  # indexed by mask; worth[0] = 0

    def marginal(self, i: int, mask: int) -> float:
        """``w(S + i) - w(S)`` for ``S`` not containing ``i``."""
        if mask >> i & 1:
            raise ValueError(f"agent {i} already belongs to {coalition_label(mask)}")
        return float(self.worth[mask | 1 << i] - self.worth[mask])


@dataclass(frozen=True)
class ShapleyAllocation:
    phi: np.ndarray
    baseline: np.ndarray
    table: CoalitionTable

    @property
    def costs(self) -> np.ndarray:
        return self.baseline - self.phi

    @property
    def savings(self) -> np.ndarray:
        return 100.0 * self.phi / self.baseline


def worth_table(
    instance: DeterministicInstance,
    baseline: Baseline | None = None,
    options: SolverOptions | None = None,
    budget: int = DEFAULT_BUDGET,
    jobs: int = 1,
) -> CoalitionTable:
    n = instance.n_agents
    needed = 2**n - 1
    if needed > budget:
        raise CoalitionBudgetExceeded(needed, budget)
    options = options or SolverOptions()
    if baseline is None:
        baseline = solve_independent(instance, options)
    masks = range(1, 2**n)

    def run(mask: int) -> float:
        return coalition_cost(instance, members(mask), baseline, options)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            costs = list(pool.map(run, masks))
    else:
        costs = [run(m) for m in masks]
    cost = np.zeros(2**n)
    cost[1:] = costs
    worth = np.zeros(2**n)
    for m in masks:
        worth[m] = sum(baseline.v[i] for i in members(m)) - cost[m]
    return CoalitionTable(n, cost, worth)


def shapley_from_table(table: CoalitionTable) -> np.ndarray:
    n = table.n_agents
    phi = np.zeros(n)
    for i in range(n):
        for mask in range(2**n):
            if mask >> i & 1:
                continue
            size = bin(mask).count("1")
            phi[i] += table.marginal(i, mask) / (n * comb(n - 1, size))
    return phi


def shapley_values(
    instance: DeterministicInstance,
    baseline: Baseline | None = None,
    options: SolverOptions | None = None,
    budget: int = DEFAULT_BUDGET,
    jobs: int = 1,
) -> ShapleyAllocation:
    options = options or SolverOptions()
    if baseline is None:
        baseline = solve_independent(instance, options)
    table = worth_table(instance, baseline, options, budget, jobs)
    return ShapleyAllocation(shapley_from_table(table), baseline.v.copy(), table)


# --- tables --------------------------------------------------------------------


def worth_csv_table(table: CoalitionTable) -> Table:
    rows = [[coalition_label(m), table.cost[m], table.worth[m]] for m in _ordered_masks(table.n_agents)]
    return Table(["coalition", "cost", "worth"], rows)


def marginal_csv_table(table: CoalitionTable) -> Table:
    n = table.n_agents
    rows = []
    for m in [0, *_ordered_masks(n)]:
        if m == 2**n - 1:
            continue
        label = coalition_label(m) if m else "{}"
        rows.append([label] + [None if m >> i & 1 else table.marginal(i, m) for i in range(n)])
    return Table(["coalition"] + [f"A{i + 1}" for i in range(n)], rows)


def allocation_csv_table(alloc: ShapleyAllocation) -> Table:
    rows = [
        [f"A{i + 1}", alloc.baseline[i], alloc.phi[i], alloc.costs[i], alloc.savings[i]]
        for i in range(alloc.phi.size)
    ]
    return Table(["agent", "baseline", "phi", "cost", "savings_pct"], rows)


def _ordered_masks(n: int) -> list[int]:
    """Nonempty coalitions by size, then lexicographically by members."""
    return sorted(range(1, 2**n), key=lambda m: (bin(m).count("1"), members(m)))
