import numpy as np
import pandas as pd
import pytest

from combine_reports import ReportSchemaError, combine_reports, print_combined
from gnn_train import REPORT_COLUMNS


def write_report(path, rows):
    pd.DataFrame(rows, columns=REPORT_COLUMNS).to_csv(path, index=False)
    return str(path)


def test_delta_against_matching_baseline(tmp_path):
    base = write_report(tmp_path / "base.csv", [["SGC", "cora", 2, 80.0, 1.0, 10], ["SGC", "cora", 4, 78.0, 1.0, 10]])
    ee = write_report(tmp_path / "ee.csv", [["EE-SGC", "cora", 2, 82.5, 0.5, 10], ["EE-SGC", "cora", 4, 77.0, 0.8, 10]])
    combined = combine_reports([base, ee])
    deltas = combined.set_index(["model", "layers"])["delta"]
    assert deltas[("EE-SGC", 2)] == pytest.approx(2.5)
    assert deltas[("EE-SGC", 4)] == pytest.approx(-1.0)
    assert np.isnan(deltas[("SGC", 2)])


def test_rows_without_baseline_pass_through(tmp_path):
    ee = write_report(tmp_path / "ee.csv", [["EE-APPNP", "pubmed", 2, 79.0, 0.3, 5]])
    combined = combine_reports([ee])
    assert len(combined) == 1
    assert np.isnan(combined.loc[0, "delta"])


def test_duplicate_rows_keep_the_last_file(tmp_path, caplog):
    first = write_report(tmp_path / "a.csv", [["SGC", "cora", 2, 70.0, 1.0, 10]])
    second = write_report(tmp_path / "b.csv", [["SGC", "cora", 2, 71.0, 1.0, 10]])
    combined = combine_reports([first, second])
    assert combined["mean_acc"].tolist() == [71.0]
    assert "duplicated" in caplog.text


def test_conflicting_layer_sets_name_both_files(tmp_path):
    a = write_report(tmp_path / "a.csv", [["SGC", "cora", 2, 80.0, 1.0, 10]])
    b = write_report(tmp_path / "b.csv", [["SGC", "citeseer", 8, 60.0, 1.0, 10]])
    with pytest.raises(ReportSchemaError) as excinfo:
        combine_reports([a, b])
    assert excinfo.value.files == [a, b]
    assert "layers" in str(excinfo.value)


def test_missing_column_is_a_schema_error(tmp_path):
    path = tmp_path / "bad.csv"
    pd.DataFrame({"model": ["SGC"], "dataset": ["cora"]}).to_csv(path, index=False)
    with pytest.raises(ReportSchemaError, match="missing column"):
        combine_reports([str(path)])


def test_print_combined_shows_signed_delta(tmp_path, capsys):
    base = write_report(tmp_path / "base.csv", [["SGC", "cora", 2, 80.0, 1.0, 10]])
    ee = write_report(tmp_path / "ee.csv", [["EE-SGC", "cora", 2, 82.5, 0.5, 10]])
    print_combined(combine_reports([base, ee]))
    out = capsys.readouterr().out
    assert "+2.50" in out
    assert "82.50 ± 0.50" in out
