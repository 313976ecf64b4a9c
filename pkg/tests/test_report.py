import json
import math

import pytest

from scenemark import MetricReport, read_jsonl, write_audit_jsonl


def test_report_json_and_table(tmp_path):
    report = MetricReport({"EM-1": 0.5, "BLEU-1": 0.25}, sample_count=4)
    payload = json.loads(report.to_json())
    assert payload == {"sample_count": 4, "metrics": {"EM-1": 0.5, "BLEU-1": 0.25}}
    table = report.format_table()
    assert "EM-1" in table and "0.5000" in table
    assert table.splitlines()[-1].endswith("4")
    report.write(tmp_path)
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "report.txt").read_text().rstrip() == table


def test_report_rejects_bad_values():
    with pytest.raises(ValueError):
        MetricReport({"x": math.nan}, 1)
    with pytest.raises(ValueError):
        MetricReport({"x": 1.0}, 0)


def test_audit_jsonl_roundtrip(tmp_path):
    rows = [{"id": "a", "value": 1.5}, {"id": "b", "note": "héllo"}]
    path = tmp_path / "audit.jsonl"
    write_audit_jsonl(path, rows)
    assert read_jsonl(path) == rows
