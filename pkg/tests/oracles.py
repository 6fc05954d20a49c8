"""Reference solvers written directly against scipy, sharing no code with fairagg's model builders."""

from __future__ import annotations

import itertools
from fractions import Fraction
from math import factorial

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp, minimize


def _layout(n, T):
    qda = np.arange(n * T).reshape(n, T)
    qb = n * T + np.arange(n * T).reshape(n, T)
    u = 2 * n * T + np.arange(T)
    return qda, qb, u


class ToyMilp:
    """Joint prosumer model as plain arrays: x = (qda, qb, u, extras)."""

    def __init__(self, p_da, p_bal, w_min, e_min, e_max, e_total, big_m=None):
        self.p_da = np.asarray(p_da, float)
        self.p_bal = np.asarray(p_bal, float)
        self.e_min, self.e_max, self.e_total = (np.asarray(a, float) for a in (e_min, e_max, e_total))
        self.n, self.T = self.e_min.size, self.p_da.size
        self.w_min = w_min
        self.big_m = float(self.e_max.sum()) if big_m is None else big_m
        self.qda, self.qb, self.u = _layout(self.n, self.T)
        self.nx = 2 * self.n * self.T + self.T
        self.rows, self.lo, self.hi = [], [], []

    def stage_cost_row(self, k, t, width):
        r = np.zeros(width)
        r[self.qda[k, t]] = self.p_da[t]
        r[self.qb[k, t]] = self.p_bal[t]
        return r

    def cost_row(self, k, width, upto=None):
        r = np.zeros(width)
        for t in range(self.T if upto is None else upto):
            r += self.stage_cost_row(k, t, width)
        return r

    def _core(self, width):
        rows, lo, hi = [], [], []
        for k in range(self.n):
            for t in range(self.T):
                r = np.zeros(width)
                r[[self.qda[k, t], self.qb[k, t]]] = 1
                rows.append(r), lo.append(self.e_min[k]), hi.append(self.e_max[k])
            r = np.zeros(width)
            r[self.qda[k]] = 1
            r[self.qb[k]] = 1
            rows.append(r), lo.append(self.e_total[k]), hi.append(np.inf)
        for t in range(self.T):
            r = np.zeros(width)
            r[self.qda[:, t]] = 1
            a, b = r.copy(), r.copy()
            a[self.u[t]] = -self.w_min
            b[self.u[t]] = -self.big_m
            rows += [a, b]
            lo += [0, -np.inf]
            hi += [np.inf, 0]
        return rows, lo, hi

    def solve(self, objective="total", accept=None, v=None, v_t=None, alpha=1.0, extra_rows=()):
        """Minimize total cost or the scaled-minimax ratio.

        ``accept``: None, "static", "average", "progressive" or "stagewise".
        ``extra_rows``: (row builder(width) -> array, lo, hi).
        Returns (objective value, x).
        """
        width = self.nx + (1 if objective == "ratio" else 0)
        rows, lo, hi = self._core(width)
        for k in range(self.n if accept else 0):
            if accept in ("static", "average"):
                cap = alpha * v[k] if accept == "static" else v_t[k].sum()
                rows.append(self.cost_row(k, width)), lo.append(-np.inf), hi.append(cap)
            elif accept == "progressive":
                for t in range(self.T):
                    rows.append(self.cost_row(k, width, t + 1)), lo.append(-np.inf), hi.append(v_t[k, : t + 1].sum())
            elif accept == "stagewise":
                for t in range(self.T):
                    rows.append(self.stage_cost_row(k, t, width)), lo.append(-np.inf), hi.append(v_t[k, t])
        c = np.zeros(width)
        if objective == "total":
            for k in range(self.n):
                c += self.cost_row(k, width)
        else:
            c[-1] = 1.0
            for k in range(self.n):
                r = self.cost_row(k, width) / v[k]
                r[-1] = -1.0
                rows.append(r), lo.append(-np.inf), hi.append(0.0)
        for build, a, b in extra_rows:
            rows.append(build(width)), lo.append(a), hi.append(b)
        ub = np.full(width, np.inf)
        for k in range(self.n):
            ub[self.qda[k]] = self.e_max[k]
            ub[self.qb[k]] = self.e_max[k]
        ub[self.u] = 1
        integrality = np.zeros(width)
        integrality[self.u] = 1
        res = milp(
            c,
            constraints=LinearConstraint(np.array(rows), lo, hi),
            bounds=Bounds(np.zeros(width), ub),
            integrality=integrality,
            options={"mip_rel_gap": 0, "presolve": True},
        )
        assert res.status == 0, res.message
        return float(res.fun), res.x

    def costs(self, x):
        return np.array([self.cost_row(k, x.size) @ x for k in range(self.n)])


def toy_oracle(instance) -> ToyMilp:
    p = instance.prosumers
    return ToyMilp(
        instance.market.p_da,
        instance.market.p_bal,
        instance.market.w_min,
        [q.e_min for q in p],
        [q.e_max for q in p],
        [q.e_total for q in p],
        instance.market.big_m_da,
    )


def independent_cost_by_enumeration(p_da, p_bal, w_min, e_min, e_max, e_total) -> float:
    """Stand-alone cost: enumerate day-ahead trading patterns, solve each LP."""
    T = len(p_da)
    best = np.inf
    for pattern in itertools.product((0, 1), repeat=T):
        # x = (qda, qb)
        c = np.concatenate([p_da, p_bal]).astype(float)
        A_ub, b_ub = [], []
        for t in range(T):
            r = np.zeros(2 * T)
            r[[t, T + t]] = -1
            A_ub.append(r), b_ub.append(-e_min)
            A_ub.append(-r), b_ub.append(e_max)
        A_ub.append(-np.ones(2 * T)), b_ub.append(-e_total)
        bounds = []
        for t in range(T):
            bounds.append((w_min, e_max) if pattern[t] else (0, 0))
        bounds += [(0, e_max)] * T
        res = linprog(c, A_ub=np.array(A_ub), b_ub=b_ub, bounds=bounds, method="highs")
        if res.status == 0:
            best = min(best, res.fun)
    return float(best)


def proportional_logsum(oracle: ToyMilp, v, eps=1e-6) -> float:
    """max sum log(v_i - L_i) by enumerating trading patterns and solving each concave program."""
    n, T = oracle.n, oracle.T
    best = -np.inf
    nx = 2 * n * T
    for pattern in itertools.product((0, 1), repeat=T):
        lb = np.zeros(nx)
        ub = np.zeros(nx)
        for k in range(n):
            ub[oracle.qb[k]] = oracle.e_max[k]
            ub[oracle.qda[k]] = [oracle.e_max[k] if pattern[t] else 0 for t in range(T)]
        cons = []
        A = []
        lo = []
        hi = []
        for k in range(n):
            for t in range(T):
                r = np.zeros(nx)
                r[[oracle.qda[k, t], oracle.qb[k, t]]] = 1
                A.append(r), lo.append(oracle.e_min[k]), hi.append(oracle.e_max[k])
            r = np.zeros(nx)
            r[oracle.qda[k]] = 1
            r[oracle.qb[k]] = 1
            A.append(r), lo.append(oracle.e_total[k]), hi.append(np.inf)
        for t in range(T):
            if pattern[t]:
                r = np.zeros(nx)
                r[oracle.qda[:, t]] = 1
                A.append(r), lo.append(oracle.w_min), hi.append(oracle.big_m)
        A = np.array(A)
        # feasibility and a strictly improving start via LP: maximize the smallest gain
        C = np.array([oracle.cost_row(k, nx + oracle.T)[:nx] for k in range(n)])
        ext = np.hstack([A, np.zeros((A.shape[0], 1))])
        gains = np.hstack([C, np.ones((n, 1))])
        res = linprog(
            np.r_[np.zeros(nx), -1.0],
            A_ub=np.vstack([-ext[np.isfinite(lo)], ext[np.isfinite(hi)], gains]),
            b_ub=np.r_[-np.array(lo)[np.isfinite(lo)], np.array(hi)[np.isfinite(hi)], v],
            bounds=list(zip(lb, ub)) + [(None, None)],
            method="highs",
        )
        if res.status != 0 or -res.fun <= eps:
            continue
        x0 = res.x[:nx]

        def f(x):
            return -np.sum(np.log(np.maximum(v - C @ x, 1e-12)))

        def g(x):
            return -(-C.T @ (1.0 / np.maximum(v - C @ x, 1e-12)))

        cons = [
            {"type": "ineq", "fun": lambda x: A @ x - np.where(np.isfinite(lo), lo, -1e9)},
            {"type": "ineq", "fun": lambda x: np.where(np.isfinite(hi), hi, 1e9) - A @ x},
            {"type": "ineq", "fun": lambda x: v - C @ x - eps},
        ]
        out = minimize(f, x0, jac=g, bounds=list(zip(lb, ub)), constraints=cons, method="SLSQP", options={"maxiter": 500, "ftol": 1e-12})
        x = out.x if out.success else x0
        best = max(best, -f(x))
    return float(best)


def shapley_by_permutations(n, worth) -> list[Fraction]:
    """Average marginal contribution over all n! arrival orders."""
    phi = [Fraction(0)] * n
    for order in itertools.permutations(range(n)):
        mask = 0
        for i in order:
            phi[i] += Fraction(worth[mask | 1 << i]) - Fraction(worth[mask])
            mask |= 1 << i
    return [p / factorial(n) for p in phi]


# --- stochastic orders by definition --------------------------------------------


def exceed_prob(x, pi, eta):
    return sum(p for a, p in zip(x, pi) if a > eta)


def shortfall(x, pi, eta):
    return sum(p * (a - eta) for a, p in zip(x, pi) if a > eta)


def dominates(kind, u, v, pi, value_tol=0, tol=0):
    etas = sorted(set(u) | set(v))
    if kind == "as":
        return all(a <= b + value_tol for a, b in zip(u, v))
    if kind == "fo":
        return all(exceed_prob(u, pi, e + value_tol) <= exceed_prob(v, pi, e) + tol for e in etas)
    if kind == "ic":
        return all(shortfall(u, pi, e) <= shortfall(v, pi, e) + tol for e in etas)
    if kind == "e":
        return sum(p * a for a, p in zip(u, pi)) <= sum(p * b for b, p in zip(v, pi)) + tol
    raise ValueError(kind)


# --- MILP by enumeration -------------------------------------------------------


def milp_by_enumeration(c, A_ub, b_ub, bounds, binaries):
    """Minimize ``c x`` s.t. ``A_ub x <= b_ub`` over every 0/1 assignment of ``binaries``.

    Each assignment gets an LP over the remaining variables.  Assignments
    are skipped only when provably useless: some row cannot be met for any
    continuous values within bounds, or the objective bound cannot beat the
    incumbent.  Returns (value, x); value is inf when infeasible.
    """
    c = np.asarray(c, float)
    A = np.asarray(A_ub, float).reshape(-1, c.size)
    b = np.asarray(b_ub, float)
    binaries = list(binaries)
    cont = [j for j in range(c.size) if j not in binaries]
    lo = np.array([bounds[j][0] for j in cont], float)
    hi = np.array([bounds[j][1] for j in cont], float)
    X = np.array(list(itertools.product((0.0, 1.0), repeat=len(binaries)))).reshape(-1, len(binaries))
    Ab, Ac = A[:, binaries], A[:, cont]
    slack = b[None, :] - X @ Ab.T
    row_min = np.minimum(Ac * lo, Ac * hi).sum(axis=1)
    possible = np.all(row_min[None, :] <= slack + 1e-9, axis=1)
    obj_lb = X @ c[binaries] + np.minimum(c[cont] * lo, c[cont] * hi).sum()
    best, arg = np.inf, None
    for k in np.flatnonzero(possible)[np.argsort(obj_lb[possible], kind="stable")]:
        if obj_lb[k] >= best - 1e-12:
            break
        if not cont:
            best, arg = float(obj_lb[k]), X[k].copy()
            continue
        res = linprog(c[cont], A_ub=Ac, b_ub=slack[k], bounds=list(zip(lo, hi)), method="highs")
        if res.status == 0:
            value = float(X[k] @ c[binaries] + res.fun)
            if value < best:
                x = np.zeros(c.size)
                x[binaries] = X[k]
                x[cont] = res.x
                best, arg = value, x
    return best, arg
