import json
import math

import numpy as np
import pytest

from fairagg.aggregation import AcceptabilityKind, FairnessOperator, solve_aggregate
from fairagg.report import (
    ReportIOError,
    Table,
    emit,
    fmt_number,
    purchase_csv_table,
    purchase_detail,
    read_csv,
    render,
    savings_csv_table,
    savings_table,
)

U = FairnessOperator.UTILITARIAN


@pytest.fixture(scope="module")
def rows(toy, toy_baseline):
    sols = [solve_aggregate(toy, U, a, toy_baseline) for a in (AcceptabilityKind.none(), AcceptabilityKind.static(1.0))]
    return sols, savings_table(sols, toy_baseline)


def test_fmt_number():
    assert fmt_number(1 / 3) == "0.333333"
    assert fmt_number(-0.0) == "0"
    assert fmt_number(None) == ""
    assert fmt_number(1234567.0) == "1.23457e+06"
    assert fmt_number(math.nan) == "nan"


def test_savings_and_poa(rows, toy_baseline):
    _, table = rows
    assert table[0].poa_abs == 0
    assert table[1].total == pytest.approx(346, abs=1e-5)
    assert table[1].poa_abs == pytest.approx(13, abs=1e-5)
    assert table[1].poa_pct == pytest.approx(100 * 13 / 333, abs=1e-4)
    assert table[1].savings == pytest.approx([48, 37.5, 0, 37.5], abs=1e-4)


def test_csv_byte_stable(rows):
    _, table = rows
    a = render(savings_csv_table(table), "csv")
    b = render(savings_csv_table(table), "csv")
    assert a == b
    parsed = read_csv(a)
    assert parsed[1]["model"] == "M(utilitarian,static(1))"
    assert parsed[1]["total"] == "346"


def test_json_layout(rows):
    _, table = rows
    doc = json.loads(render(savings_csv_table(table, {"seed": 7}), "json"))
    assert doc["columns"][0] == "model"
    assert doc["meta"] == {"seed": 7}
    assert doc["rows"][0]["A3"] == -105


def test_purchase_flags(rows):
    sols, _ = rows
    detail = purchase_detail(sols[0])
    assert np.array_equal(detail.flag, detail.qb > 1e-9)
    table = purchase_csv_table(detail)
    assert table.header[:5] == ["stage", "u", "A1_da", "A1_bal", "A1_flag"]
    assert len(table.rows) == 5


def test_unknown_format_and_io_error(tmp_path):
    t = Table(["a"], [[1]])
    with pytest.raises(ValueError):
        render(t, "xml")
    with pytest.raises(ReportIOError):
        emit(t, tmp_path / "missing" / "x.csv")
    assert emit(t, tmp_path / "x.csv") == "a\n1\n"
