"""External backend: HiGHS through ``scipy.optimize.milp``."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .model import MipModel
from .solver import Solution, SolverOptions, Status


def solve_highs(model: MipModel, options: SolverOptions) -> Solution:
    c, A, sense, b, lb, ub, is_int = model.arrays()
    lo = np.where(sense >= 0, b, -np.inf)
    hi = np.where(sense <= 0, b, np.inf)
    constraints = [LinearConstraint(A, lo, hi)] if A.shape[0] else []
    res = milp(
        c,
        constraints=constraints,
        integrality=is_int.astype(int),
        bounds=Bounds(lb, ub),
        options={"mip_rel_gap": 0.0, "node_limit": int(options.node_limit)},
    )
    const = model.objective.constant
    if res.status == 0:
        x = res.x.copy()
        x[is_int] = np.round(x[is_int])
        return Solution(Status.OPTIMAL, x, float(c @ x) + const)
    if res.status == 2:
        return Solution(Status.INFEASIBLE, None, math.nan)
    if res.status == 3:
        return Solution(Status.UNBOUNDED, None, -math.inf)
    if res.x is not None:
        return Solution(Status.ITERATION_LIMIT, res.x, float(c @ res.x) + const)
    return Solution(Status.ITERATION_LIMIT, None, math.nan)
