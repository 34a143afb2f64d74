"""Persisting aggregate reports as a text table, CSV or JSON.

All three renderings are pure functions of the reports, so identical reports
give identical bytes. Floats are written with ``repr`` in CSV and JSON (exact
round trip) and with fixed precision in the text table.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from pathlib import Path
from typing import Sequence

from .errors import InvalidArgumentError, ReportIOError
from .harness import AggregateReport, SweepCell

FORMATS = ("table", "csv", "json")

ROW_LABELS = (
    "Average of the Posterior Means",
    "Empirical Frequentist Mean",
    "Average of Posterior Variances (x n)",
    "Empirical Frequentist Variance (x n)",
    "Average Sandwich Estimate",
    "Average Bayesian credible interval",
    "Frequentist confidence interval",
    "Posterior Coverage",
)

_PAIR_FIELDS = ("avg_cred_interval", "freq_interval")


def _fields() -> list[str]:
    return [f.name for f in dataclasses.fields(AggregateReport)]


def _as_list(reports) -> list[AggregateReport]:
    if isinstance(reports, AggregateReport):
        return [reports]
    out = list(reports)
    if not out:
        raise InvalidArgumentError("nothing to report")
    return out


def _check_finite(rep: AggregateReport):
    for name in _fields():
        v = getattr(rep, name)
        vals = v if isinstance(v, tuple) else (v,)
        for x in vals:
            if isinstance(x, float) and not math.isfinite(x):
                # a single replicate has no empirical variance; that one is allowed
                if name == "emp_freq_var_times_n" and rep.replicates == 1:
                    continue
                raise InvalidArgumentError(f"report field {name} is not finite: {x!r}")


def _cells(rep: AggregateReport) -> list[str]:
    f2 = lambda v: "nan" if math.isnan(v) else f"{v:.2f}"  # noqa: E731
    return [
        f2(rep.avg_post_mean),
        f2(rep.emp_freq_mean),
        f2(rep.avg_post_var_times_n),
        f2(rep.emp_freq_var_times_n),
        f2(rep.avg_sandwich_times_n),
        f"({f2(rep.avg_cred_interval[0])},{f2(rep.avg_cred_interval[1])})",
        f"({f2(rep.freq_interval[0])},{f2(rep.freq_interval[1])})",
        f2(rep.coverage_pct),
    ]


def render_table(reports) -> str:
    """One row per quantity, one column per report (headed by n)."""
    reps = _as_list(reports)
    header = [""] + [f"n={r.n}" for r in reps]
    rows = [header] + [[label] + cells for label, *cells in
                       zip(ROW_LABELS, *[_cells(r) for r in reps])]
    widths = [max(len(row[j]) for row in rows) for j in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        parts = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(parts).rstrip())
        if i == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def _flat_keys() -> list[str]:
    keys = []
    for name in _fields():
        if name in _PAIR_FIELDS:
            keys += [f"{name}_lo", f"{name}_hi"]
        else:
            keys.append(name)
    return keys


def _flat_values(rep: AggregateReport) -> list[str]:
    out = []
    for name in _fields():
        v = getattr(rep, name)
        for x in (v if name in _PAIR_FIELDS else (v,)):
            out.append(repr(float(x)) if isinstance(x, float) else str(x))
    return out


def render_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_flat_keys())
    for rep in _as_list(reports):
        w.writerow(_flat_values(rep))
    return buf.getvalue()


def _to_record(rep: AggregateReport) -> dict:
    d = dataclasses.asdict(rep)
    for name in _PAIR_FIELDS:
        d[name] = list(d[name])
    # NaN is not valid JSON; the only NaN a report may carry is the R=1 variance
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def render_json(reports) -> str:
    return json.dumps([_to_record(r) for r in _as_list(reports)], sort_keys=True, indent=2) + "\n"


def report_from_record(rec: dict) -> AggregateReport:
    kw = {}
    for f in dataclasses.fields(AggregateReport):
        if f.name not in rec:
            raise InvalidArgumentError(f"record lacks {f.name!r}")
        v = rec[f.name]
        if f.name in _PAIR_FIELDS:
            v = (float(v[0]), float(v[1]))
        elif v is None:
            v = math.nan
        kw[f.name] = v
    return AggregateReport(**kw)


def parse_json(text: str) -> list[AggregateReport]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"malformed report: {exc}") from exc
    return [report_from_record(r) for r in (data if isinstance(data, list) else [data])]


def parse_csv(text: str) -> list[AggregateReport]:
    rows = list(csv.DictReader(io.StringIO(text)))
    types = {f.name: f.type for f in dataclasses.fields(AggregateReport)}
    out = []
    for row in rows:
        rec = {}
        for name, typ in types.items():
            if name in _PAIR_FIELDS:
                rec[name] = (float(row[f"{name}_lo"]), float(row[f"{name}_hi"]))
            elif typ in ("int", int):
                rec[name] = int(row[name])
            elif typ in ("float", float):
                rec[name] = float(row[name])
            else:
                rec[name] = row[name]
        out.append(report_from_record(rec))
    return out


def render(reports, fmt: str = "table") -> str:
    reps = _as_list(reports)
    for r in reps:
        _check_finite(r)
    if fmt == "table":
        return render_table(reps)
    if fmt == "csv":
        return render_csv(reps)
    if fmt == "json":
        return render_json(reps)
    raise InvalidArgumentError(f"format must be one of {FORMATS}")


def _write(text: str, path) -> Path:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportIOError(f"cannot write report to {path}: {exc}", path) from exc
    return path


def emit_report(reports, fmt: str = "table", path=None) -> str:
    """Render ``reports`` and, if ``path`` is given, write them there. Returns the text."""
    text = render(reports, fmt)
    if path is not None:
        _write(text, path)
    return text


# --------------------------------------------------------------------------
# dimension sweep


def render_sweep(cells: Sequence[SweepCell], fmt: str = "table") -> str:
    """Per-cell means (freq, Bayes), variances (freq, Bayes, sandwich) and coverage."""
    if fmt != "table":
        return render([c.report for c in cells], fmt)
    rows = [["q", "n", "(theta_F, theta_B)", "(V_F, V_B, Sigma)", "Coverage"]]
    for c in cells:
        r = c.report
        rows.append([
            str(c.q), str(c.n),
            f"({r.emp_freq_mean:.2f},{r.avg_post_mean:.2f})",
            f"({r.emp_freq_var_times_n:.2f},{r.avg_post_var_times_n:.2f},{r.avg_sandwich_times_n:.2f})",
            f"{r.coverage_pct:.2f}",
        ])
    widths = [max(len(row[j]) for row in rows) for j in range(len(rows[0]))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def emit_sweep(cells: Sequence[SweepCell], fmt: str = "table", path=None) -> str:
    for c in cells:
        _check_finite(c.report)
    text = render_sweep(cells, fmt)
    if path is not None:
        _write(text, path)
    return text
