"""Deterministic JSON report writers and CSV convergence tables."""

import json

import numpy as np
import pytest

from bdie import reports


def test_json_report_adds_schema_version(tmp_path):
    path = reports.write_json_report(tmp_path / "r.json", {"value": 1.5})
    body = reports.read_json_report(path)
    assert body["schema_version"] == reports.SCHEMA_VERSION
    assert body["value"] == 1.5


def test_json_report_is_byte_deterministic(tmp_path):
    payload = {"b": [1, 2, 3], "a": {"y": 0.1, "x": np.float64(2.0)}}
    p1 = reports.write_json_report(tmp_path / "one.json", payload)
    p2 = reports.write_json_report(tmp_path / "two.json", dict(payload))
    assert p1.read_bytes() == p2.read_bytes()


def test_json_report_sorts_keys_and_ends_with_newline(tmp_path):
    path = reports.write_json_report(tmp_path / "r.json", {"zz": 1, "aa": 2})
    text = path.read_text()
    assert text.index('"aa"') < text.index('"zz"')
    assert text.endswith("\n")


def test_json_report_converts_arrays_and_scalars(tmp_path):
    payload = {"arr": np.arange(3.0), "n": np.int64(7), "flag": True}
    body = reports.read_json_report(
        reports.write_json_report(tmp_path / "r.json", payload))
    assert body["arr"] == [0.0, 1.0, 2.0]
    assert body["n"] == 7
    assert body["flag"] is True


def test_json_report_rejects_non_finite(tmp_path):
    with pytest.raises(ValueError):
        reports.write_json_report(tmp_path / "r.json", {"bad": np.inf})


def test_output_dir_env_override_wins(tmp_path, monkeypatch):
    env_dir = tmp_path / "env-target"
    monkeypatch.setenv(reports.ENV_OUTPUT_DIR, str(env_dir))
    resolved = reports.resolve_output_dir(str(tmp_path / "requested"))
    assert resolved == env_dir
    assert env_dir.is_dir()


def test_output_dir_uses_request_without_env(tmp_path, monkeypatch):
    monkeypatch.delenv(reports.ENV_OUTPUT_DIR, raising=False)
    target = tmp_path / "nested" / "out"
    assert reports.resolve_output_dir(str(target)) == target
    assert target.is_dir()


@pytest.fixture
def sample_table():
    table = reports.ConvergenceTable(metric_names=("err_a", "err_b"))
    table.add_row(1, 0.5, 80, [0.125, 1.0 / 3.0], 1.25)
    table.add_row(2, 0.25, 480, [0.03125, 0.1], 9.5)
    return table


def test_convergence_columns(sample_table):
    assert sample_table.columns == ("level", "h_surface", "n_cells",
                                    "err_a", "err_b", "runtime_seconds")


def test_convergence_csv_round_trip_is_lossless(sample_table, tmp_path):
    path = sample_table.to_csv(tmp_path / "t.csv")
    back = reports.ConvergenceTable.from_csv(path)
    assert back.metric_names == sample_table.metric_names
    assert back.rows == sample_table.rows
    # A second serialization of the parsed table is byte-identical.
    again = back.to_csv(tmp_path / "t2.csv")
    assert again.read_bytes() == path.read_bytes()


def test_convergence_column_lookup(sample_table):
    assert sample_table.column("level") == [1, 2]
    assert sample_table.column("err_b") == [1.0 / 3.0, 0.1]


def test_convergence_rejects_metric_count_mismatch(sample_table):
    with pytest.raises(ValueError, match="metric count"):
        sample_table.add_row(3, 0.125, 2560, [0.01], 30.0)


def test_convergence_rejects_nonincreasing_levels(sample_table):
    with pytest.raises(ValueError, match="strictly increasing"):
        sample_table.add_row(2, 0.125, 2560, [0.01, 0.02], 30.0)


def test_convergence_rejects_negative_metric():
    table = reports.ConvergenceTable(metric_names=("err",))
    with pytest.raises(ValueError, match="negative"):
        table.add_row(1, 0.5, 80, [-1e-3], 1.0)


def test_convergence_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError, match="header"):
        reports.ConvergenceTable.from_csv(path)
