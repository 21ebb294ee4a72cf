import pytest

from bellbox.errors import CsvSchemaError
from bellbox.tensorio import emit_csv, format_csv


def test_format_csv_uses_first_row_order():
    rows = [{"b": 2, "entropy": 1.5}, {"b": 3, "entropy": 2.5}]
    assert format_csv(rows) == "b,entropy\n2,1.5\n3,2.5\n"


def test_format_csv_with_explicit_header():
    assert format_csv([{"a": 1, "b": 2}], header=["b", "a"]) == "b,a\n2,1\n"


def test_format_csv_header_only():
    assert format_csv([], header=["iter", "loss"]) == "iter,loss\n"


def test_format_csv_requires_header_for_no_rows():
    with pytest.raises(CsvSchemaError):
        format_csv([])


def test_format_csv_rejects_mismatched_rows():
    with pytest.raises(CsvSchemaError):
        format_csv([{"a": 1}, {"a": 1, "b": 2}])


def test_emit_csv(tmp_path):
    emit_csv([{"x": 1}], tmp_path / "out.csv")
    assert (tmp_path / "out.csv").read_text() == "x\n1\n"
