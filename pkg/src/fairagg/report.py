"""Savings and purchase tables plus byte-stable CSV/JSON output."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .aggregation import AcceptTag, AggregateSolution, Baseline, ZeroBaseline, price_of_acceptability

FORMATS = ("csv", "json")


class ReportIOError(OSError):
    pass


@dataclass
class Table:
    header: list[str]
    rows: list[list[Any]]
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SavingsRow:
    model: str
    savings: np.ndarray  # percent per agent
    total: float
    poa_abs: float
    poa_pct: float


def fmt_number(x) -> str:
    """Six significant digits, '.' decimal point, no locale; blank for None."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    s = f"{x:.6g}"
    return "0" if s == "-0" else s


def _json_value(x):
    if x is None or isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    x = float(x)
    if not math.isfinite(x):
        return None
    v = float(f"{x:.6g}")
    return 0.0 if v == 0 else v


def model_label(solution) -> str:
    acc = solution.acceptability
    acc_label = acc.label if hasattr(acc, "label") else acc.value
    return f"M({solution.operator.value},{acc_label})"


def _is_reference(solution) -> bool:
    acc = solution.acceptability
    tag = acc.tag if hasattr(acc, "tag") else acc
    return tag.value == AcceptTag.NONE.value


def _agent_costs(solution) -> np.ndarray:
    return solution.expected if hasattr(solution, "expected") else solution.costs


def _total(solution) -> float:
    return solution.expected_total if hasattr(solution, "expected_total") else solution.total


def _baseline_values(baseline) -> np.ndarray:
    return baseline.expectation if hasattr(baseline, "expectation") else baseline.v


def savings_table(solutions: Sequence, baseline) -> list[SavingsRow]:
    """One row per solution: savings % per agent, total cost, PoA.

    PoA is measured against the solution in ``solutions`` with the same
    operator and no acceptability; stochastic rows use expected costs.
    Blank PoA if no such reference is present.
    """
    v = np.asarray(_baseline_values(baseline), dtype=float)
    for i, vi in enumerate(v):
        if vi <= 0:
            raise ZeroBaseline(i)
    refs = {}
    for sol in solutions:
        if _is_reference(sol):
            refs.setdefault(sol.operator, _total(sol))
    out = []
    for sol in solutions:
        costs = np.asarray(_agent_costs(sol), dtype=float)
        total = _total(sol)
        ref = refs.get(sol.operator)
        if ref is None:
            poa_abs = poa_pct = math.nan
        else:
            poa = price_of_acceptability(ref, total)
            poa_abs, poa_pct = poa.absolute, poa.percent
        out.append(SavingsRow(model_label(sol), 100.0 * (v - costs) / v, float(total), poa_abs, poa_pct))
    return out


def savings_csv_table(rows: Sequence[SavingsRow], meta: dict | None = None) -> Table:
    n = rows[0].savings.size if rows else 0
    header = ["model"] + [f"A{i + 1}" for i in range(n)] + ["total", "poa_abs", "poa_pct"]
    body = [[r.model, *r.savings.tolist(), r.total, r.poa_abs, r.poa_pct] for r in rows]
    return Table(header, body, dict(meta or {}))


@dataclass(frozen=True)
class PurchaseDetail:
    """Per stage and agent: day-ahead and balancing volumes.

    ``flag[i, t]`` marks a balancing purchase by agent ``i`` at stage ``t``;
    ``u[t] == 0`` marks stages without day-ahead trading.
    """

    qda: np.ndarray  # (N, T)
    qb: np.ndarray  # (N, T)
    u: np.ndarray  # (T,)
    flag: np.ndarray  # (N, T)


def purchase_detail(solution) -> PurchaseDetail:
    qb = np.asarray(solution.qb, dtype=float)
    if qb.ndim == 3:  # stochastic: expected second-stage purchases
        qb = np.einsum("kwt,w->kt", qb, solution.probabilities)
    qda = np.asarray(solution.qda, dtype=float)
    return PurchaseDetail(qda, qb, np.asarray(solution.u, dtype=float), qb > 1e-9)


def purchase_csv_table(detail: PurchaseDetail) -> Table:
    n, T = detail.qda.shape
    header = ["stage", "u"]
    for i in range(n):
        header += [f"A{i + 1}_da", f"A{i + 1}_bal", f"A{i + 1}_flag"]
    rows = []
    for t in range(T):
        row: list[Any] = [str(t + 1), detail.u[t]]
        for i in range(n):
            row += [detail.qda[i, t], detail.qb[i, t], "1" if detail.flag[i, t] else "0"]
        rows.append(row)
    return Table(header, rows)


def render(table: Table, fmt: str) -> str:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {', '.join(FORMATS)}")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(table.header)
        for row in table.rows:
            w.writerow([fmt_number(x) for x in row])
        return buf.getvalue()
    doc = {
        "columns": list(table.header),
        "rows": [{h: _json_value(x) for h, x in zip(table.header, row)} for row in table.rows],
    }
    if table.meta:
        doc["meta"] = table.meta
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def emit(table: Table, path: str | Path | None, fmt: str = "csv") -> str:
    """Render ``table``; write it to ``path`` when given.  Returns the text."""
    text = render(table, fmt)
    if path is not None:
        try:
            Path(path).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise ReportIOError(f"cannot write {path}: {exc}") from exc
    return text


def read_csv(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


__all__ = [
    "AggregateSolution",
    "Baseline",
    "PurchaseDetail",
    "ReportIOError",
    "SavingsRow",
    "Table",
    "emit",
    "fmt_number",
    "purchase_csv_table",
    "purchase_detail",
    "render",
    "savings_csv_table",
    "savings_table",
]
