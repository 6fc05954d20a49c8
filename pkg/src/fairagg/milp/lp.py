"""Dense two-phase LP solver on top of the bounded simplex kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import BASIC, LOWER, UPPER

LE, EQ, GE = -1, 0, 1


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded" | "iteration_limit"
    x: np.ndarray | None
    objective: float
    iterations: int


def solve_lp(
    c: np.ndarray,
    A: np.ndarray,
    sense: np.ndarray,
    b: np.ndarray,
    lb: np.ndarray,
    ub: np.ndarray,
    feasibility_tol: float = 1e-7,
    kernel=None,
    max_iter: int | None = None,
    bland_after: int = 50,
) -> LpResult:
    """Minimize ``c @ x`` subject to ``A x (sense) b`` and ``lb <= x <= ub``.

    ``sense`` holds -1 (<=), 0 (=) or +1 (>=) per row.  Bounds may be
    infinite; free and upper-only variables are transformed internally.
    """
    iterate = kernel or _kernels.iterate
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, c.size)
    b = np.asarray(b, dtype=float)
    sense = np.asarray(sense, dtype=np.int64)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    n = c.size
    m = b.size

    if np.any(lb > ub + feasibility_tol):
        return LpResult("infeasible", None, np.nan, 0)

    # Map x onto nonnegative columns y with 0 <= y <= u.
    #   finite lb:           x = lb + y
    #   -inf lb, finite ub:  x = ub - y
    #   free:                x = y+ - y-
    cols = []  # (orig index, sign, offset, range)
    for j in range(n):
        if np.isfinite(lb[j]):
            cols.append((j, 1.0, lb[j], ub[j] - lb[j]))
        elif np.isfinite(ub[j]):
            cols.append((j, -1.0, ub[j], np.inf))
        else:
            cols.append((j, 1.0, 0.0, np.inf))
            cols.append((j, -1.0, 0.0, np.inf))
    ny = len(cols)
    src = np.array([k[0] for k in cols], dtype=np.int64)
    sgn = np.array([k[1] for k in cols])
    uy = np.array([max(k[3], 0.0) for k in cols])
    offset = np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))

    Ay = A[:, src] * sgn
    cy = c[src] * sgn
    by = b - A @ offset

    # Slack columns, then sign-normalize rows so that rhs >= 0.
    n_slack = int(np.count_nonzero(sense != EQ))
    S = np.zeros((m, n_slack))
    slack_rows = np.flatnonzero(sense != EQ)
    for k, i in enumerate(slack_rows):
        S[i, k] = 1.0 if sense[i] == LE else -1.0
    flip = by < 0
    Ay[flip] *= -1.0
    S[flip] *= -1.0
    by = np.abs(by)

    # Rows whose slack now has coefficient +1 start with that slack basic.
    basic_slack = np.full(m, -1, dtype=np.int64)
    for k, i in enumerate(slack_rows):
        if S[i, k] > 0:
            basic_slack[i] = ny + k
    art_rows = np.flatnonzero(basic_slack < 0)
    n_art = art_rows.size
    Art = np.zeros((m, n_art))
    Art[art_rows, np.arange(n_art)] = 1.0

    T = np.ascontiguousarray(np.hstack([Ay, S, Art]))
    ntot = T.shape[1]
    ub_all = np.concatenate([uy, np.full(n_slack, np.inf), np.full(n_art, np.inf)])
    basis = basic_slack.copy()
    basis[art_rows] = ny + n_slack + np.arange(n_art)
    state = np.full(ntot, LOWER, dtype=np.int64)
    state[basis] = BASIC
    beta = by.copy()
    eligible = np.ones(ntot, dtype=np.bool_)
    if max_iter is None:
        max_iter = 50 * (m + ntot) + 1000
    iters = 0

    def reduced_costs(cost):
        return cost - cost[basis] @ T

    if n_art:
        cost1 = np.zeros(ntot)
        cost1[ny + n_slack :] = 1.0
        d = reduced_costs(cost1)
        status, it, _ = iterate(T, d, beta, basis, state, ub_all, eligible, max_iter, bland_after)
        iters += it
        if status == _kernels.ITERATION_LIMIT:
            return LpResult("iteration_limit", None, np.nan, iters)
        # each remaining artificial is the violation of its own row
        pos = np.flatnonzero(basis >= ny + n_slack)
        rows = art_rows[basis[pos] - ny - n_slack]
        if np.any(beta[pos] > feasibility_tol * np.maximum(1.0, by[rows])):
            return LpResult("infeasible", None, np.nan, iters)
        ub_all[ny + n_slack :] = 0.0
        eligible[ny + n_slack :] = False

    cost2 = np.concatenate([cy, np.zeros(n_slack + n_art)])
    d = reduced_costs(cost2)
    status, it, _ = iterate(T, d, beta, basis, state, ub_all, eligible, max_iter, bland_after)
    iters += it
    if status == _kernels.UNBOUNDED:
        return LpResult("unbounded", None, -np.inf, iters)
    if status == _kernels.ITERATION_LIMIT:
        return LpResult("iteration_limit", None, np.nan, iters)

    yall = np.where(state == UPPER, ub_all, 0.0)
    yall[basis] = beta
    y = np.clip(yall[:ny], 0.0, uy)
    x = offset.copy()
    np.add.at(x, src, sgn * y)
    return LpResult("optimal", x, float(c @ x), iters)
