"""Solution types, solver options and the embedded branch-and-bound."""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import _kernels
from .lp import solve_lp
from .model import Expr, MilpError, MipModel

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITERATION_LIMIT = "IterationLimit"


class NodeLimitExceeded(MilpError):
    """Raised by callers that insist on a proven optimum."""

    def __init__(self, message: str, solution: "Solution | None" = None):
        super().__init__(message)
        self.solution = solution


class SolverFailure(MilpError):
    """A model expected to be solvable came back infeasible or unbounded."""

    def __init__(self, message: str, status: "Status"):
        super().__init__(message)
        self.status = status


Backend = Union[str, Callable[[MipModel, "SolverOptions"], "Solution"]]


def _default_backend() -> str:
    return os.environ.get("FAIRAGG_SOLVER", "embedded").strip().lower() or "embedded"


@dataclass
class SolverOptions:
    feasibility_tol: float = 1e-7
    integrality_tol: float = 1e-6
    absolute_mip_gap: float = 1e-9
    node_limit: int = 1_000_000
    backend: Backend = field(default_factory=_default_backend)

    def __post_init__(self):
        for name in ("feasibility_tol", "integrality_tol", "absolute_mip_gap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if isinstance(self.backend, str) and self.backend not in ("embedded", "highs"):
            raise ValueError(f"unknown backend {self.backend!r}; expected 'embedded' or 'highs'")

    @property
    def backend_name(self) -> str:
        return self.backend if isinstance(self.backend, str) else getattr(self.backend, "__name__", "external")


@dataclass
class Solution:
    status: Status
    values: np.ndarray | None
    objective_value: float
    nodes: int = 0

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def value(self, expr: Expr | int) -> float:
        if self.values is None:
            raise ValueError(f"no values available (status {self.status.value})")
        if isinstance(expr, Expr):
            return expr.value(self.values)
        return float(self.values[expr])


def solve(model: MipModel, options: SolverOptions | None = None) -> Solution:
    """Solve ``model`` with the backend named in ``options``."""
    options = options or SolverOptions()
    backend = options.backend
    if callable(backend):
        return backend(model, options)
    if backend == "highs":
        from .highs import solve_highs

        return solve_highs(model, options)
    return branch_and_bound(model, options)


def branch_and_bound(model: MipModel, options: SolverOptions, kernel=None) -> Solution:
    """Best-bound branch and bound over LP relaxations.

    Branches on the most fractional integer variable (lowest id on ties);
    every node LP is solved from scratch.
    """
    c, A, sense, b, lb0, ub0, is_int = model.arrays()
    const = model.objective.constant
    int_idx = np.flatnonzero(is_int)
    gap = options.absolute_mip_gap
    itol = options.integrality_tol

    incumbent: np.ndarray | None = None
    inc_obj = math.inf
    counter = itertools.count()
    # (bound, seq, lb, ub)
    heap: list = [(-math.inf, next(counter), lb0, ub0)]
    nodes = 0
    root_unbounded = False

    while heap:
        bound, _, lb, ub = heapq.heappop(heap)
        if bound >= inc_obj - gap:
            continue
        if nodes >= options.node_limit:
            log.warning("node limit %d reached; returning incumbent", options.node_limit)
            heap.append((bound, 0, lb, ub))
            break
        nodes += 1
        res = solve_lp(c, A, sense, b, lb, ub, options.feasibility_tol, kernel=kernel)
        if res.status == "infeasible":
            continue
        if res.status == "unbounded":
            if nodes == 1:
                root_unbounded = True
                break
            continue
        if res.status != "optimal":
            log.warning("LP relaxation hit its iteration limit at node %d", nodes)
            continue
        obj = res.objective
        if obj >= inc_obj - gap:
            continue
        x = res.x
        if int_idx.size == 0:
            incumbent, inc_obj = x, obj
            continue
        xi = x[int_idx]
        frac = np.abs(xi - np.round(xi))
        if frac.max() <= itol:
            xr = x.copy()
            xr[int_idx] = np.round(xi)
            incumbent, inc_obj = xr, obj
            continue
        # most fractional; argmax picks the lowest index among ties
        dist = np.abs((xi - np.floor(xi)) - 0.5)
        dist[frac <= itol] = np.inf
        k = int(int_idx[np.argmin(dist)])
        v = x[k]
        ub_dn = ub.copy()
        ub_dn[k] = math.floor(v)
        lb_up = lb.copy()
        lb_up[k] = math.ceil(v)
        heapq.heappush(heap, (obj, next(counter), lb, ub_dn))
        heapq.heappush(heap, (obj, next(counter), lb_up, ub))

    if root_unbounded:
        return Solution(Status.UNBOUNDED, None, -math.inf, nodes)
    limit_hit = bool(heap) and nodes >= options.node_limit and any(h[0] < inc_obj - gap for h in heap)
    if incumbent is None:
        if limit_hit:
            return Solution(Status.ITERATION_LIMIT, None, math.nan, nodes)
        return Solution(Status.INFEASIBLE, None, math.nan, nodes)
    status = Status.ITERATION_LIMIT if limit_hit else Status.OPTIMAL
    return Solution(status, incumbent, inc_obj + const, nodes)


def require_optimal(sol: Solution, what: str) -> Solution:
    """Return ``sol`` if it is optimal; raise otherwise."""
    if sol.status is Status.OPTIMAL:
        return sol
    if sol.status is Status.ITERATION_LIMIT:
        raise NodeLimitExceeded(f"{what}: node limit reached before proving optimality", sol)
    raise SolverFailure(f"{what}: solver returned {sol.status.value}", sol.status)


def kernel_name() -> str:
    return _kernels.KERNEL_NAME
