import json
import math

import pytest

from t4d.report import SCALE_FACTORS, MetricReport, column_label, round_sig, scaled_value


def report():
    return MetricReport(
        entries=[
            {"sequence_id": "a", "mode": "registered",
             "metrics": {"dtw": 0.0123, "dfd": 0.00456, "delta_m": 7.8e-6, "lve": 1.5}},
            {"sequence_id": "b", "mode": "registered",
             "metrics": {"dtw": 0.0321, "dfd": 0.00654, "delta_m": 8.7e-6, "lve": 2.5}},
        ],
        metadata={"mode": "registered"},
    )


def test_scale_factors():
    assert SCALE_FACTORS == {"dtw": 1e-2, "dfd": 1e-3, "delta_m": 1e-6}
    # shown value times the column factor gives back the raw value
    assert scaled_value("dtw", 0.0123) == pytest.approx(1.23, rel=1e-15)
    assert scaled_value("dfd", 0.00456) == pytest.approx(4.56, rel=1e-15)
    assert scaled_value("delta_m", 7.8e-6) == pytest.approx(7.8, rel=1e-15)
    assert scaled_value("lve", 1.5) == 1.5
    assert column_label("dtw") == "dtw x10^-2"
    assert column_label("dfd") == "dfd x10^-3"
    assert column_label("delta_m") == "delta_m x10^-6"
    assert column_label("mve") == "mve"


def test_csv_table():
    lines = report().to_csv().splitlines()
    assert lines[0] == "sequence_id,dtw x10^-2,dfd x10^-3,delta_m x10^-6,lve"
    assert lines[1] == "a,1.23,4.56,7.8,1.5"
    assert lines[2] == "b,3.21,6.54,8.7,2.5"
    assert lines[3] == "mean,2.22,5.55,8.25,2"


def test_json_raw_values_and_metadata():
    d = json.loads(report().to_json())
    assert d["entries"][0]["metrics"]["dtw"] == 0.0123
    assert d["aggregate"]["lve"] == {"mean": 2.0, "std": 0.5, "n": 2}
    meta = d["metadata"]
    assert meta["scale_factors"]["dfd"] == 1e-3
    assert meta["units"]["delta_m"] == "mm^2"
    assert "tool_version" in meta


def test_json_deterministic_and_roundtrip(tmp_path):
    r = report()
    assert r.to_json() == report().to_json()
    p = tmp_path / "r.json"
    r.write_json(p)
    back = MetricReport.read_json(p)
    assert back.to_json() == r.to_json()
    assert back.value("dtw", "b") == 0.0321
    assert back.value("lve") == 2.0
    with pytest.raises(KeyError):
        back.value("lve", "zzz")


def test_round_sig():
    assert round_sig(1 / 3) == 0.333333333333
    assert round_sig(123456789.123456789) == 123456789.123
    assert round_sig(0.0) == 0.0


def test_rejects_non_finite():
    with pytest.raises(ValueError, match="not finite"):
        MetricReport([{"sequence_id": "x", "mode": "registered", "metrics": {"lve": math.nan}}])


def test_merge():
    a, b = report(), report()
    m = MetricReport.merge([a, b])
    assert len(m.entries) == 4
    assert m.aggregate()["lve"]["n"] == 4
