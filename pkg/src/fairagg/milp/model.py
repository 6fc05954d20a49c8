"""Solver-agnostic mixed-integer linear model container."""

from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

import numpy as np


class MilpError(Exception):
    """Base class for model-construction and solver errors."""


class BoundError(MilpError):
    pass


class UnknownVariable(MilpError):
    pass


class Relation(str, enum.Enum):
    LE = "<="
    EQ = "="
    GE = ">="

    @property
    def code(self) -> int:
        return {"<=": -1, "=": 0, ">=": 1}[self.value]


class Expr:
    """Linear expression: a mapping variable id -> coefficient plus a constant.

    Supports ``+``, ``-`` and scalar ``*`` so builders can write
    ``cost = p_da * qda + p_bal * qb``-style sums over ``Expr.var(...)``.
    """

    __slots__ = ("terms", "constant")

    def __init__(self, terms: Mapping[int, float] | None = None, constant: float = 0.0):
        self.terms: dict[int, float] = dict(terms or {})
        self.constant = float(constant)

    @classmethod
    def var(cls, j: int, coef: float = 1.0) -> "Expr":
        return cls({j: float(coef)})

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], constant: float = 0.0) -> "Expr":
        e = cls(constant=constant)
        for j, a in pairs:
            e.terms[j] = e.terms.get(j, 0.0) + float(a)
        return e

    @classmethod
    def sum(cls, items: Iterable["Expr"]) -> "Expr":
        out = cls()
        for it in items:
            out._iadd(it, 1.0)
        return out

    def _iadd(self, other: "ExprLike", scale: float) -> None:
        if isinstance(other, Expr):
            for j, a in other.terms.items():
                self.terms[j] = self.terms.get(j, 0.0) + scale * a
            self.constant += scale * other.constant
        else:
            self.constant += scale * float(other)

    def __add__(self, other: "ExprLike") -> "Expr":
        out = self.copy()
        out._iadd(other, 1.0)
        return out

    __radd__ = __add__

    def __sub__(self, other: "ExprLike") -> "Expr":
        out = self.copy()
        out._iadd(other, -1.0)
        return out

    def __rsub__(self, other: "ExprLike") -> "Expr":
        return (-1.0) * self + other

    def __mul__(self, k: float) -> "Expr":
        k = float(k)
        return Expr({j: k * a for j, a in self.terms.items()}, k * self.constant)

    __rmul__ = __mul__

    def __neg__(self) -> "Expr":
        return self * -1.0

    def __truediv__(self, k: float) -> "Expr":
        return self * (1.0 / float(k))

    def copy(self) -> "Expr":
        return Expr(self.terms, self.constant)

    def value(self, x: np.ndarray) -> float:
        return self.constant + sum(a * x[j] for j, a in self.terms.items())

    def __repr__(self) -> str:
        parts = [f"{a:+g}*x{j}" for j, a in sorted(self.terms.items())]
        if self.constant or not parts:
            parts.append(f"{self.constant:+g}")
        return "Expr(" + " ".join(parts) + ")"


ExprLike = Union[Expr, float, int]


@dataclass
class Row:
    coefs: dict[int, float]
    relation: Relation
    rhs: float
    name: str | None = None


@dataclass
class MipModel:
    """Minimization MILP with bounded variables and linear rows.

    ``meta`` is free-form storage for builders (index layouts and the
    like); the solver never reads it.
    """

    lb: list[float] = field(default_factory=list)
    ub: list[float] = field(default_factory=list)
    integer: list[bool] = field(default_factory=list)
    var_names: list[str | None] = field(default_factory=list)
    rows: list[Row] = field(default_factory=list)
    objective: Expr = field(default_factory=Expr)
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return len(self.lb)

    def add_variable(self, lb: float = 0.0, ub: float = math.inf, integer: bool = False, name: str | None = None) -> int:
        lb, ub = float(lb), float(ub)
        if lb > ub:
            raise BoundError(f"lower bound {lb} exceeds upper bound {ub}" + (f" for {name}" if name else ""))
        if integer and (math.isinf(lb) or math.isinf(ub)):
            raise BoundError("integer variables need finite bounds")
        self.lb.append(lb)
        self.ub.append(ub)
        self.integer.append(bool(integer))
        self.var_names.append(name)
        return len(self.lb) - 1

    def add_binary(self, name: str | None = None) -> int:
        return self.add_variable(0.0, 1.0, True, name)

    def _coerce(self, expr) -> Expr:
        if isinstance(expr, Expr):
            e = expr
        elif isinstance(expr, Mapping):
            e = Expr(expr)
        else:
            e = Expr.from_pairs(expr)
        for j in e.terms:
            if not (isinstance(j, (int, np.integer)) and 0 <= j < self.n_vars):
                raise UnknownVariable(f"variable id {j!r} is not declared in this model")
        return e

    def add_constraint(self, expr, relation: Relation | str, rhs: float = 0.0, name: str | None = None) -> int:
        """Append ``expr (relation) rhs``; the expression constant moves to the rhs."""
        e = self._coerce(expr)
        rel = Relation(relation)
        coefs = {int(j): a for j, a in e.terms.items() if a != 0.0}
        self.rows.append(Row(coefs, rel, float(rhs) - e.constant, name))
        return len(self.rows) - 1

    def set_objective(self, expr) -> None:
        self.objective = self._coerce(expr).copy()

    def row(self, k: int) -> Row:
        return self.rows[k]

    def copy(self) -> "MipModel":
        return copy.deepcopy(self)

    def arrays(self):
        """Dense (c, A, sense, b, lb, ub, integer) arrays for the solvers."""
        n, m = self.n_vars, len(self.rows)
        c = np.zeros(n)
        for j, a in self.objective.terms.items():
            c[j] += a
        A = np.zeros((m, n))
        sense = np.empty(m, dtype=np.int64)
        b = np.empty(m)
        for i, r in enumerate(self.rows):
            for j, a in r.coefs.items():
                A[i, j] = a
            sense[i] = r.relation.code
            b[i] = r.rhs
        return (
            c,
            A,
            sense,
            b,
            np.array(self.lb, dtype=float),
            np.array(self.ub, dtype=float),
            np.array(self.integer, dtype=bool),
        )

    def to_lp_string(self) -> str:
        """Plain-text LP-style dump for debugging."""

        def name(j):
            return self.var_names[j] or f"x{j}"

        def fmt(coefs):
            if not coefs:
                return "0"
            return " ".join(f"{a:+.10g} {name(j)}" for j, a in sorted(coefs.items()))

        out = ["Minimize", f" obj: {fmt(self.objective.terms)}" + (f" {self.objective.constant:+.10g}" if self.objective.constant else ""), "Subject To"]
        for i, r in enumerate(self.rows):
            out.append(f" {r.name or f'c{i}'}: {fmt(r.coefs)} {r.relation.value} {r.rhs:.10g}")
        out.append("Bounds")
        for j in range(self.n_vars):
            lo = "-inf" if math.isinf(self.lb[j]) else f"{self.lb[j]:.10g}"
            hi = "+inf" if math.isinf(self.ub[j]) else f"{self.ub[j]:.10g}"
            out.append(f" {lo} <= {name(j)} <= {hi}")
        ints = [name(j) for j in range(self.n_vars) if self.integer[j]]
        if ints:
            out.append("General")
            out.append(" " + " ".join(ints))
        out.append("End")
        return "\n".join(out) + "\n"
