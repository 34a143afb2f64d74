import dataclasses
import math

import pytest

from orthoboot import report
from orthoboot.errors import InvalidArgumentError, ReportIOError
from orthoboot.harness import AggregateReport, SweepCell


def _rep(**kw):
    base = dict(dgp="plm", q=5, score="partialled_out", learner="forest", n=500, replicates=200,
                bootstrap=500, level=0.95, master_seed=1, theta0=3.0, avg_post_mean=3.0203,
                emp_freq_mean=3.0198, avg_post_var_times_n=5.567, emp_freq_var_times_n=5.40,
                avg_sandwich_times_n=5.613, avg_cred_interval=(2.816, 3.226), freq_interval=(2.81, 3.23),
                coverage_pct=95.0, freq_coverage_pct=94.5, rejected_draw_total=0)
    base.update(kw)
    return AggregateReport(**base)


def test_table_layout():
    text = report.render(_rep(), "table")
    lines = text.splitlines()
    labels = [ln for ln in lines if ln.startswith(report.ROW_LABELS)]
    assert [next(lab for lab in report.ROW_LABELS if ln.startswith(lab)) for ln in labels] == list(report.ROW_LABELS)
    assert "Average of the Posterior Means" in lines[2] and lines[2].endswith("3.02")
    assert lines[-1].startswith("Posterior Coverage") and lines[-1].endswith("95.00")
    assert "(2.82,3.23)" in text


def test_table_columns_per_report():
    text = report.render([_rep(n=250), _rep(n=500)], "table")
    assert "n=250" in text.splitlines()[0] and "n=500" in text.splitlines()[0]


@pytest.mark.parametrize("fmt", ["json", "csv"])
def test_round_trip(fmt):
    reps = [_rep(), _rep(n=1000, avg_post_mean=1 / 3)]
    text = report.render(reps, fmt)
    back = report.parse_json(text) if fmt == "json" else report.parse_csv(text)
    assert back == reps


def test_json_round_trip_single_replicate_nan():
    r = _rep(replicates=1, emp_freq_var_times_n=math.nan)
    back = report.parse_json(report.render(r, "json"))[0]
    assert math.isnan(back.emp_freq_var_times_n)
    assert dataclasses.replace(back, emp_freq_var_times_n=0.0) == dataclasses.replace(r, emp_freq_var_times_n=0.0)


def test_csv_has_every_field_with_stable_keys():
    header = report.render(_rep(), "csv").splitlines()[0].split(",")
    for f in dataclasses.fields(AggregateReport):
        if f.name in ("avg_cred_interval", "freq_interval"):
            assert f"{f.name}_lo" in header and f"{f.name}_hi" in header
        else:
            assert f.name in header


def test_non_finite_report_rejected():
    with pytest.raises(InvalidArgumentError):
        report.render(_rep(avg_post_mean=math.inf), "csv")
    with pytest.raises(InvalidArgumentError):
        report.render(_rep(), "xml")


def test_byte_stable_files(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    report.emit_report(_rep(), "csv", a)
    report.emit_report(_rep(), "csv", b)
    assert a.read_bytes() == b.read_bytes()


def test_unwritable_path(tmp_path):
    target = tmp_path / "missing" / "r.txt"
    with pytest.raises(ReportIOError) as info:
        report.emit_report(_rep(), "table", target)
    assert info.value.path == target


def test_sweep_table():
    cells = [SweepCell(5, 250, _rep(n=250)), SweepCell(20, 250, _rep(q=20, n=250, avg_post_mean=3.11))]
    text = report.render_sweep(cells)
    assert "(theta_F, theta_B)" in text.splitlines()[0]
    assert "(3.02,3.11)" in text
    assert report.parse_json(report.render_sweep(cells, "json"))[1].q == 20
