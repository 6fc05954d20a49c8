"""Direct definitions of the stochastic orders on finite probability spaces.

These functions compare two discrete random costs ``U`` and ``V`` that live
on the same scenarios with weights ``pi``.  They evaluate each order by its
definition and are used to check solutions and MILP encodings.  Passing
``fractions.Fraction`` inputs gives exact answers.
"""

from __future__ import annotations

from typing import Sequence

Number = float


def _thresholds(u: Sequence, v: Sequence) -> list:
    # Both step functions only change at realized values; testing every
    # realized value of either variable covers all cases.
    return sorted(set(u) | set(v))


def _exceed(x: Sequence, pi: Sequence, eta) -> Number:
    return sum(p for xi, p in zip(x, pi) if xi > eta)


def _shortfall(x: Sequence, pi: Sequence, eta) -> Number:
    return sum(p * (xi - eta) for xi, p in zip(x, pi) if xi > eta)


def almost_sure(u: Sequence, v: Sequence, tol: Number = 0) -> bool:
    """``U <= V`` in every scenario."""
    return all(a <= b + tol for a, b in zip(u, v))


def first_order(u: Sequence, v: Sequence, pi: Sequence, tol: Number = 0, value_tol: Number = 0) -> bool:
    """``P(U > eta) <= P(V > eta)`` for every threshold ``eta``.

    ``tol`` slackens probabilities; ``value_tol`` lets ``U`` exceed a threshold
    by that much before it counts (solver round-off on cost values).
    """
    return all(
        _exceed(u, pi, eta + value_tol) <= _exceed(v, pi, eta) + tol for eta in _thresholds(u, v)
    )


def increasing_convex(u: Sequence, v: Sequence, pi: Sequence, tol: Number = 0) -> bool:
    """``E[(U - eta)+] <= E[(V - eta)+]`` for every threshold ``eta``."""
    return all(_shortfall(u, pi, eta) <= _shortfall(v, pi, eta) + tol for eta in _thresholds(u, v))


def expectation(u: Sequence, v: Sequence, pi: Sequence, tol: Number = 0) -> bool:
    """``E[U] <= E[V]``."""
    return sum(p * a for a, p in zip(u, pi)) <= sum(p * b for b, p in zip(v, pi)) + tol
