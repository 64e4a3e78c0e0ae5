"""Shared value types and date helpers.

FeatureMatrix lives here (rather than in the features subpackage) because
ingestion already produces day-indexed matrices and every later stage
consumes them.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

ISO_FMT = "%Y-%m-%d"


def parse_date(text: str) -> dt.date:
    """Parse an ISO-8601 (YYYY-MM-DD) date string."""
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise DataError(f"malformed date {text!r}: {exc}") from None


def format_date(d: dt.date) -> str:
    return d.isoformat()


def date_span(start: dt.date, end: dt.date) -> list[dt.date]:
    """All dates from start to end inclusive."""
    if end < start:
        raise DataError(f"date range end {end} before start {start}")
    return [start + dt.timedelta(days=i) for i in range((end - start).days + 1)]


def fmt_float(x: float) -> str:
    """Render a float with 17 significant digits (bit-faithful round trip)."""
    return format(float(x), ".17g")


@dataclass
class FeatureMatrix:
    """Day-indexed real matrix: one row per day, one column per feature.

    The date index is carried through every transform so that latent row d
    always corresponds to input day d.
    """

    dates: list[dt.date]
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"feature matrix must be 2-D, got shape {self.values.shape}")
        if len(self.dates) != self.values.shape[0]:
            raise DataError(
                f"{len(self.dates)} dates but {self.values.shape[0]} feature rows"
            )
        if not np.all(np.isfinite(self.values)):
            raise DataError("feature matrix contains non-finite values")

    @property
    def n_days(self) -> int:
        return self.values.shape[0]

    @property
    def n_dims(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        """Same date index, new values (used by transforms)."""
        return FeatureMatrix(list(self.dates), values)


def write_matrix_csv(fm: FeatureMatrix, stream, prefix: str = "z") -> None:
    """Write `date,<prefix>0,...` rows with 17 significant digits."""
    import csv

    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["date"] + [f"{prefix}{i}" for i in range(fm.n_dims)])
    for day, row in zip(fm.dates, fm.values):
        writer.writerow([format_date(day)] + [fmt_float(v) for v in row])


def read_matrix_csv(source) -> FeatureMatrix:
    """Read a day-indexed matrix CSV written by write_matrix_csv."""
    import csv
    import io

    if isinstance(source, (str, bytes)):
        source = io.StringIO(source if isinstance(source, str) else source.decode())
    rows = iter(csv.reader(source))
    header = next(rows, None)
    if header is None or header[0].strip() != "date":
        raise DataError("bad matrix header: first column must be 'date'")
    dates: list[dt.date] = []
    values: list[list[float]] = []
    width = len(header) - 1
    for lineno, row in enumerate(rows, start=1):
        if not row:
            continue
        if len(row) != width + 1:
            raise DataError(f"matrix row {lineno} has {len(row) - 1} values, expected {width}")
        dates.append(parse_date(row[0]))
        values.append([float(v) for v in row[1:]])
    if not dates:
        raise DataError("no matrix rows in input")
    return FeatureMatrix(dates, np.array(values))
