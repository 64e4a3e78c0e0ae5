"""Precision/recall/F1 against the holiday calendar and best-F1 sweeps.

Detection quality is summarized by the best F1 over all decision
thresholds. Candidate thresholds are the midpoints between consecutive
distinct p-values plus {0, 1}: a finite set that realizes every
achievable confusion matrix. False positives are reported but are not
errors; flagged non-holidays may well be genuine events outside the
calendar.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

from .core import fmt_float, format_date
from .density import AnomalyScore
from .errors import DataError
from .ingest import DayCalendar


@dataclass
class DayOutcome:
    date: dt.date
    p_value: float
    flagged: bool
    is_holiday: bool


@dataclass
class DetectionReport:
    """One method's detection quality at its best threshold."""

    method: str
    best_threshold: float
    precision: float
    recall: float
    f1: float
    holidays_identified: int
    tp: int
    fp: int
    fn: int
    tn: int
    rows: list[DayOutcome] = field(default_factory=list, repr=False)
    gmm_k: int | None = None
    seed: int | None = None


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def confusion_metrics(
    flags: set[dt.date], calendar: DayCalendar
) -> tuple[float, float, float, tuple[int, int, int, int]]:
    """Precision, recall, F1, and (TP, FP, FN, TN) for a flag set.

    TP counts flagged holidays; precision and F1 use the zero convention
    when undefined (no flags, or zero precision and recall).
    """
    if not calendar.dates:
        raise DataError("calendar is empty")
    dates = set(calendar.dates)
    outside = sorted(flags - dates)
    if outside:
        raise DataError(
            f"flagged dates outside the calendar: {[format_date(d) for d in outside]}"
        )
    holidays = calendar.holidays()
    tp = len(flags & holidays)
    fp = len(flags) - tp
    fn = len(holidays) - tp
    tn = len(dates) - tp - fp - fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / len(holidays) if holidays else 0.0
    return precision, recall, _f1(precision, recall), (tp, fp, fn, tn)


def candidate_thresholds(p_values) -> list[float]:
    """Midpoints between consecutive sorted distinct p-values, plus 0 and 1."""
    distinct = sorted(set(float(p) for p in p_values))
    mids = [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])]
    return [0.0] + mids + [1.0]


def best_f1_sweep(
    scores: list[AnomalyScore],
    calendar: DayCalendar,
    method: str = "",
    gmm_k: int | None = None,
    seed: int | None = None,
) -> DetectionReport:
    """Report at the F1-maximizing threshold; ties prefer fewer flags.

    A day is flagged when its p-value is strictly below the threshold, so
    the smallest tied threshold yields the smallest flag set.
    """
    if calendar.n_holidays() == 0:
        raise DataError("calendar has no holidays to evaluate against")
    score_dates = {s.date for s in scores}
    if score_dates != set(calendar.dates):
        raise DataError("scores and calendar cover different dates")

    best = None
    for threshold in candidate_thresholds(s.p_value for s in scores):
        flags = {s.date for s in scores if s.p_value < threshold}
        precision, recall, f1, counts = confusion_metrics(flags, calendar)
        if best is None or f1 > best[0]:
            best = (f1, threshold, precision, recall, counts)
    f1, threshold, precision, recall, (tp, fp, fn, tn) = best

    holidays = calendar.holidays()
    rows = [
        DayOutcome(s.date, s.p_value, s.p_value < threshold, s.date in holidays)
        for s in sorted(scores, key=lambda s: s.date)
    ]
    return DetectionReport(
        method, threshold, precision, recall, f1, tp, tp, fp, fn, tn, rows, gmm_k, seed
    )


# ---------------------------------------------------------------------------
# Rendering

_COLUMNS = [
    "method",
    "f1",
    "precision",
    "recall",
    "holidays_identified",
    "best_threshold",
    "gmm_k",
    "seed",
]


def render_report_csv(reports: list[DetectionReport], stream) -> None:
    """Full-precision CSV, one row per method, input order preserved."""
    _validate_reports(reports)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(_COLUMNS)
    for r in reports:
        writer.writerow(
            [
                r.method,
                fmt_float(r.f1),
                fmt_float(r.precision),
                fmt_float(r.recall),
                r.holidays_identified,
                fmt_float(r.best_threshold),
                "" if r.gmm_k is None else r.gmm_k,
                "" if r.seed is None else r.seed,
            ]
        )


def render_report_text(reports: list[DetectionReport]) -> str:
    """Aligned table with values rounded to 3 decimals."""
    _validate_reports(reports)
    header = ["Method", "F1", "Precision", "Recall", "Holidays Identified",
              "Best Threshold", "K", "seed"]
    body = [
        [
            r.method,
            f"{r.f1:.3f}",
            f"{r.precision:.3f}",
            f"{r.recall:.3f}",
            str(r.holidays_identified),
            f"{r.best_threshold:.3f}",
            "" if r.gmm_k is None else str(r.gmm_k),
            "" if r.seed is None else str(r.seed),
        ]
        for r in reports
    ]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = []
    for row in [header] + body:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_day_rows_csv(report: DetectionReport, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["date", "p_value", "flagged", "is_holiday"])
    for row in report.rows:
        writer.writerow(
            [format_date(row.date), fmt_float(row.p_value), int(row.flagged), int(row.is_holiday)]
        )


def _validate_reports(reports: list[DetectionReport]) -> None:
    if not reports:
        raise DataError("need at least one report to render")
    for r in reports:
        if not r.method:
            raise DataError("report with empty method name")
