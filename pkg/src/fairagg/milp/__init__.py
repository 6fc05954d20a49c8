"""Mixed-integer linear programming: model container, embedded solver, backends."""

from .model import BoundError, Expr, MilpError, MipModel, Relation, Row, UnknownVariable
from .solver import (
    NodeLimitExceeded,
    Solution,
    SolverFailure,
    SolverOptions,
    Status,
    branch_and_bound,
    kernel_name,
    require_optimal,
    solve,
)

__all__ = [
    "BoundError",
    "Expr",
    "MilpError",
    "MipModel",
    "NodeLimitExceeded",
    "Relation",
    "Row",
    "Solution",
    "SolverFailure",
    "SolverOptions",
    "Status",
    "UnknownVariable",
    "branch_and_bound",
    "kernel_name",
    "require_optimal",
    "solve",
]
