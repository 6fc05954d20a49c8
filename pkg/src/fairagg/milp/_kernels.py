"""Bounded-variable primal simplex iteration kernels.

Two interchangeable implementations of the same pivoting loop live here:
``_iterate_loops`` (explicit loops, compiled with ``numba.njit``) and
``_iterate_numpy`` (vectorized numpy, interpreted).  ``FAIRAGG_KERNEL``
selects one at import time: ``numba`` (default when numba imports) or
``numpy``.

Tableau conventions shared by both paths:

* ``T`` is the dense ``m x n`` matrix ``B^-1 A``; basic columns are unit vectors.
* ``beta`` holds the current values of the basic variables.
* ``state[j]`` is ``LOWER`` / ``UPPER`` for nonbasic columns (value 0 or
  ``ub[j]``) and ``BASIC`` otherwise.  All lower bounds are 0.
* ``d`` is the reduced-cost row.

Pricing is Dantzig's rule; after ``bland_after`` consecutive degenerate
steps the loop switches to Bland's rule for the rest of the call, which
rules out cycling.
"""

from __future__ import annotations

import os

import numpy as np

LOWER = 0
UPPER = 1
BASIC = 2

OPTIMAL = 0
UNBOUNDED = 1
ITERATION_LIMIT = 2

DUAL_TOL = 1e-9
PIVOT_TOL = 1e-9
RATIO_TIE = 1e-12


def _iterate_numpy(T, d, beta, basis, state, ub, eligible, max_iter, bland_after):
    m, n = T.shape
    z = 0.0
    degenerate = 0
    bland = False
    finite_ub = np.isfinite(ub)
    for it in range(max_iter):
        nonbasic = eligible & (state != BASIC)
        cand = nonbasic & (((state == LOWER) & (d < -DUAL_TOL)) | ((state == UPPER) & (d > DUAL_TOL)))
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            return OPTIMAL, it, z
        if bland:
            j = idx[0]
        else:
            j = idx[np.argmax(np.abs(d[idx]))]
        s = 1.0 if state[j] == LOWER else -1.0
        alpha = s * T[:, j]

        theta = ub[j]
        lims = np.full(m, np.inf)
        pos = alpha > PIVOT_TOL
        lims[pos] = np.maximum(beta[pos], 0.0) / alpha[pos]
        bub = ub[basis]
        neg = (alpha < -PIVOT_TOL) & finite_ub[basis]
        lims[neg] = np.maximum(bub[neg] - beta[neg], 0.0) / (-alpha[neg])
        r = -1
        if m > 0:
            rmin = lims.min()
            if rmin < theta:
                ties = np.flatnonzero(lims <= rmin + RATIO_TIE)
                if bland:
                    r = ties[np.argmin(basis[ties])]
                else:
                    r = ties[np.argmax(np.abs(alpha[ties]))]
                theta = lims[r]
        if r < 0 and not np.isfinite(theta):
            return UNBOUNDED, it, z

        z += d[j] * s * theta
        if theta != 0.0:
            beta -= theta * alpha
        if theta <= RATIO_TIE:
            degenerate += 1
            if degenerate > bland_after:
                bland = True
        else:
            degenerate = 0

        if r < 0:
            state[j] = UPPER if state[j] == LOWER else LOWER
            continue

        entering_value = theta if state[j] == LOWER else ub[j] - theta
        leaving = basis[r]
        state[leaving] = LOWER if alpha[r] > 0 else UPPER

        T[r, :] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        rows = np.flatnonzero(col)
        if rows.size:
            prow = T[r]
            nz = np.flatnonzero(prow)
            T[np.ix_(rows, nz)] -= np.outer(col[rows], prow[nz])
            T[rows, j] = 0.0
        dj = d[j]
        if dj != 0.0:
            d -= dj * T[r]
            d[j] = 0.0
        basis[r] = j
        state[j] = BASIC
        beta[r] = entering_value
    return ITERATION_LIMIT, max_iter, z


def _iterate_loops(T, d, beta, basis, state, ub, eligible, max_iter, bland_after):
    m, n = T.shape
    z = 0.0
    degenerate = 0
    bland = False
    col = np.empty(m)
    nzcols = np.empty(n, dtype=np.int64)
    for it in range(max_iter):
        j = -1
        best = 0.0
        for k in range(n):
            if not eligible[k] or state[k] == BASIC:
                continue
            dk = d[k]
            if (state[k] == LOWER and dk < -DUAL_TOL) or (state[k] == UPPER and dk > DUAL_TOL):
                if bland:
                    j = k
                    break
                if abs(dk) > best:
                    best = abs(dk)
                    j = k
        if j < 0:
            return OPTIMAL, it, z
        s = 1.0 if state[j] == LOWER else -1.0

        theta = ub[j]
        rmin = np.inf
        for i in range(m):
            a = s * T[i, j]
            if a > PIVOT_TOL:
                b = beta[i] if beta[i] > 0.0 else 0.0
                lim = b / a
            elif a < -PIVOT_TOL and np.isfinite(ub[basis[i]]):
                g = ub[basis[i]] - beta[i]
                lim = (g if g > 0.0 else 0.0) / (-a)
            else:
                continue
            if lim < rmin:
                rmin = lim
        r = -1
        if m > 0 and rmin < theta:
            bestkey = -1.0
            for i in range(m):
                a = s * T[i, j]
                if a > PIVOT_TOL:
                    b = beta[i] if beta[i] > 0.0 else 0.0
                    lim = b / a
                elif a < -PIVOT_TOL and np.isfinite(ub[basis[i]]):
                    g = ub[basis[i]] - beta[i]
                    lim = (g if g > 0.0 else 0.0) / (-a)
                else:
                    continue
                if lim <= rmin + RATIO_TIE:
                    if bland:
                        if r < 0 or basis[i] < basis[r]:
                            r = i
                    elif abs(a) > bestkey:
                        bestkey = abs(a)
                        r = i
            a = s * T[r, j]
            if a > 0.0:
                b = beta[r] if beta[r] > 0.0 else 0.0
                theta = b / a
            else:
                g = ub[basis[r]] - beta[r]
                theta = (g if g > 0.0 else 0.0) / (-a)
        if r < 0 and not np.isfinite(theta):
            return UNBOUNDED, it, z

        z += d[j] * s * theta
        if theta != 0.0:
            for i in range(m):
                beta[i] -= theta * s * T[i, j]
        if theta <= RATIO_TIE:
            degenerate += 1
            if degenerate > bland_after:
                bland = True
        else:
            degenerate = 0

        if r < 0:
            state[j] = UPPER if state[j] == LOWER else LOWER
            continue

        entering_value = theta if state[j] == LOWER else ub[j] - theta
        leaving = basis[r]
        state[leaving] = LOWER if s * T[r, j] > 0.0 else UPPER

        piv = T[r, j]
        nnz = 0
        for k in range(n):
            if T[r, k] != 0.0:
                T[r, k] /= piv
                nzcols[nnz] = k
                nnz += 1
        for i in range(m):
            col[i] = T[i, j]
        col[r] = 0.0
        for i in range(m):
            f = col[i]
            if f == 0.0:
                continue
            for q in range(nnz):
                k = nzcols[q]
                T[i, k] -= f * T[r, k]
            T[i, j] = 0.0
        dj = d[j]
        if dj != 0.0:
            for q in range(nnz):
                k = nzcols[q]
                d[k] -= dj * T[r, k]
            d[j] = 0.0
        basis[r] = j
        state[j] = BASIC
        beta[r] = entering_value
    return ITERATION_LIMIT, max_iter, z


_compiled = {}


def get_kernel(name: str):
    """Return the iteration kernel called ``name`` ("numba" or "numpy")."""
    if name == "numpy":
        return _iterate_numpy
    if name != "numba":
        raise ValueError(f"unknown kernel {name!r}; expected 'numba' or 'numpy'")
    if "numba" not in _compiled:
        from numba import njit

        _compiled["numba"] = njit(cache=True, nogil=True)(_iterate_loops)
    return _compiled["numba"]


def _select_backend():
    requested = os.environ.get("FAIRAGG_KERNEL", "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        raise ValueError(f"FAIRAGG_KERNEL must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba":
        try:
            return "numba", get_kernel("numba")
        except ImportError:  # pragma: no cover - numba is a declared dependency
            pass
    return "numpy", _iterate_numpy


KERNEL_NAME, iterate = _select_backend()
