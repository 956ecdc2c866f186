import pytest

from kvmas.report import ExperimentReport, ReportRow, emit_report, summarize_trials


def _row(condition="c", compliance=None):
    return ReportRow(
        condition=condition,
        accuracy=0.75,
        injection_compliance=compliance,
        mean_decoded_tokens=12.5,
        mean_prefill_tokens=101.25,
        mean_relay_tokens=0.0,
        mean_latency_s=0.0123,
        p95_latency_s=0.05,
        trials=4,
    )


def _report(rows):
    return ExperimentReport(kind="noise", config={"trials": 4, "seed": 1},
                            engine_fingerprint="abc123", rows=tuple(rows))


def test_json_round_trip():
    report = _report([_row("noise=0"), _row("noise=1", compliance=0.5)])
    again = ExperimentReport.from_json(report.to_json())
    assert again == report


def test_json_to_csv_to_rows_preserves_fields():
    report = _report([_row("a"), _row("b", compliance=0.25)])
    rows = ExperimentReport.rows_from_csv(report.to_csv())
    assert rows == report.rows


def test_empty_report_serializes():
    report = _report([])
    again = ExperimentReport.from_json(report.to_json())
    assert again.rows == ()
    assert "abc123" in report.to_json()
    assert report.to_csv().count("\n") == 1  # header only


def test_total_tokens_identity():
    row = _row()
    assert row.mean_total_tokens == row.mean_prefill_tokens + row.mean_decoded_tokens


def test_strip_timing_zeroes_wall_clock():
    stripped = _report([_row()]).stripped()
    assert stripped.rows[0].mean_latency_s == 0.0
    assert stripped.rows[0].p95_latency_s == 0.0
    assert stripped.rows[0].accuracy == 0.75


def test_emit_report_writes_files(tmp_path):
    report = _report([_row()])
    jpath = tmp_path / "r.json"
    cpath = tmp_path / "r.csv"
    emit_report(report, jpath, "json")
    emit_report(report, cpath, "csv")
    assert ExperimentReport.from_json(jpath.read_text()) == report
    assert ExperimentReport.rows_from_csv(cpath.read_text()) == report.rows


def test_emit_report_unwritable_path(tmp_path):
    report = _report([_row()])
    with pytest.raises(OSError, match="cannot write report"):
        emit_report(report, tmp_path / "missing-dir" / "r.json", "json")


def test_emit_report_unknown_format(tmp_path):
    with pytest.raises(ValueError, match="format"):
        emit_report(_report([]), tmp_path / "r.xml", "xml")


def test_summarize_weighted_means():
    row = summarize_trials(
        "cond",
        grades=[True, True, False, False],
        decoded=[10, 20, 30, 40],
        prefilled=[1, 1, 1, 1],
        relayed=[0, 0, 0, 0],
        latencies=[0.1, 0.4, 0.2, 0.3],
        compliance=[True, False, False, False],
    )
    assert row.accuracy == 0.5
    assert row.injection_compliance == 0.25
    assert row.mean_decoded_tokens == 25.0
    assert row.p95_latency_s == 0.4
    assert row.trials == 4


def test_summarize_rejects_empty():
    with pytest.raises(ValueError, match="zero trials"):
        summarize_trials("c", [], [], [], [], [])
