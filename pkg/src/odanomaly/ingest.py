"""Trip-record ingestion, daily OD tensors, calendars, synthetic data.

All functions are pure: they take immutable inputs and return new values,
so they are safe to call from multiple threads. CSV parsing is a single
streaming pass.

CSV formats (UTF-8, ISO-8601 dates):
  trips:    header ``date,origin,destination,count`` (count: nonnegative int)
  nodes:    header ``node_id,name`` (name optional)
  holidays: header ``date,label``
  edges:    header ``node_a,node_b`` (undirected transit links)
  flows:    header ``date,origin,destination,flow`` (real-valued tensor dump)
"""

from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import FeatureMatrix, date_span, fmt_float, format_date, parse_date
from .errors import ConfigError, DataError
from .graph import PhysicalGraph

DEFAULT_WEEKEND_DAYS = frozenset({5, 6})  # Saturday, Sunday


@dataclass(frozen=True)
class TripRecord:
    """One aggregated trip-count observation."""

    date: dt.date
    origin_id: str
    dest_id: str
    count: int


@dataclass
class ODTensor:
    """Stack of daily origin-destination flow matrices.

    flows has shape (D, N, N); flows[d][i][j] is the flow from node i to
    node j on dates[d]. Dates are strictly increasing but not necessarily
    contiguous.
    """

    dates: list[dt.date]
    node_ids: list[str]
    flows: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.flows = np.asarray(self.flows, dtype=np.float64)
        d, n = len(self.dates), len(self.node_ids)
        if self.flows.shape != (d, n, n):
            raise DataError(
                f"flow tensor shape {self.flows.shape} inconsistent with "
                f"{d} dates and {n} nodes"
            )
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.flows)):
            raise DataError("flow tensor contains non-finite values")
        if np.any(self.flows < 0):
            raise DataError("flow tensor contains negative values")

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def day_totals(self) -> np.ndarray:
        return self.flows.sum(axis=(1, 2))


@dataclass
class DayCalendar:
    """Per-date weekday/weekend class and holiday flag.

    weekday_class is 0 for weekdays and 1 for weekend days, derived only
    from the day of week; holidays are an independent boolean flag.
    """

    dates: list[dt.date]
    weekday_class: np.ndarray = field(repr=False)
    is_holiday: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.weekday_class = np.asarray(self.weekday_class, dtype=np.int64)
        self.is_holiday = np.asarray(self.is_holiday, dtype=bool)
        d = len(self.dates)
        if self.weekday_class.shape != (d,) or self.is_holiday.shape != (d,):
            raise DataError("calendar arrays must align with the date list")
        if not np.all(np.isin(self.weekday_class, [0, 1])):
            raise DataError("weekday_class must be 0 (weekday) or 1 (weekend)")

    def holidays(self) -> set[dt.date]:
        return {d for d, h in zip(self.dates, self.is_holiday) if h}

    def n_holidays(self) -> int:
        return int(self.is_holiday.sum())


@dataclass
class SyntheticConfig:
    """Parameters for the synthetic OD dataset generator.

    Weekday and weekend regimes get independent spatial patterns sharing a
    planted block (community) structure; anomalous dates are blended toward
    the opposite regime by anomaly_strength (1.0 = full regime swap).
    """

    n_nodes: int
    n_days: int
    seed: int
    weekday_base_flow: float = 50.0
    weekend_scale: float = 0.5
    noise_scale: float = 0.1
    anomaly_dates: frozenset[dt.date] = frozenset()
    anomaly_strength: float = 0.7
    start_date: dt.date = dt.date(2017, 1, 2)
    n_blocks: int = 5
    block_boost: float = 4.0

    def __post_init__(self) -> None:
        if self.n_nodes < 2:
            raise ConfigError(f"n_nodes must be >= 2, got {self.n_nodes}")
        if self.n_days < 14:
            raise ConfigError(f"n_days must be >= 14, got {self.n_days}")
        if not 0.0 < self.weekend_scale < 1.0:
            raise ConfigError(f"weekend_scale must be in (0, 1), got {self.weekend_scale}")
        if self.noise_scale < 0.0:
            raise ConfigError(f"noise_scale must be >= 0, got {self.noise_scale}")
        if not 0.0 <= self.anomaly_strength <= 1.0:
            raise ConfigError(
                f"anomaly_strength must be in [0, 1], got {self.anomaly_strength}"
            )
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")
        self.anomaly_dates = frozenset(self.anomaly_dates)
        valid = set(self.date_range())
        bad = sorted(d for d in self.anomaly_dates if d not in valid)
        if bad:
            raise ConfigError(f"anomaly dates outside generated range: {bad}")

    def date_range(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i) for i in range(self.n_days)]


# ---------------------------------------------------------------------------
# CSV readers


def _open_rows(source) -> Iterable[list[str]]:
    if isinstance(source, (str, bytes)):
        source = io.StringIO(source if isinstance(source, str) else source.decode())
    return csv.reader(source)


def _check_header(row: list[str] | None, expected: list[str], what: str) -> None:
    if row is None:
        raise DataError(f"empty {what} input: missing header {expected}")
    got = [c.strip() for c in row]
    if got[: len(expected)] != expected:
        raise DataError(f"bad {what} header {got}, expected {expected}")


def read_node_registry(source) -> list[str]:
    """Read the node registry CSV (`node_id,name`); order defines node index."""
    rows = iter(_open_rows(source))
    header = next(rows, None)
    _check_header(header, ["node_id"], "node registry")
    ids: list[str] = []
    seen: set[str] = set()
    for lineno, row in enumerate(rows, start=1):
        if not row:
            continue
        node_id = row[0].strip()
        if not node_id:
            raise DataError(f"empty node_id at line {lineno}")
        if node_id in seen:
            raise DataError(f"duplicate node_id {node_id!r} at line {lineno}")
        seen.add(node_id)
        ids.append(node_id)
    if not ids:
        raise DataError("node registry contains no nodes")
    return ids


def read_holiday_csv(source) -> list[dt.date]:
    """Read the holiday CSV (`date,label`) into a sorted date list."""
    rows = iter(_open_rows(source))
    header = next(rows, None)
    _check_header(header, ["date"], "holiday")
    out: set[dt.date] = set()
    for row in rows:
        if not row:
            continue
        out.add(parse_date(row[0]))
    return sorted(out)


def parse_trip_records(
    csv_stream,
    node_registry: Sequence[str],
    date_range: tuple[dt.date, dt.date] | None = None,
) -> ODTensor:
    """Parse trip-record CSV rows into a daily OD tensor.

    Counts for the same (date, origin, destination) add up. When a
    date_range (start, end) is declared, every day in the range appears in
    the tensor even with no records; records outside the range are errors.
    Without a declared range the tensor covers exactly the observed dates.
    Line numbers in errors count data rows, header excluded.
    """
    node_index = {n: i for i, n in enumerate(node_registry)}
    rows = iter(_open_rows(csv_stream))
    header = next(rows, None)
    _check_header(header, ["date", "origin", "destination", "count"], "trip")

    cells: dict[tuple[dt.date, int, int], float] = {}
    n_records = 0
    for lineno, row in enumerate(rows, start=1):
        if not row:
            continue
        if len(row) < 4:
            raise DataError(f"trip row with {len(row)} fields at line {lineno}")
        try:
            day = parse_date(row[0])
        except DataError as exc:
            raise DataError(f"{exc} at line {lineno}") from None
        origin, dest = row[1].strip(), row[2].strip()
        if origin not in node_index:
            raise DataError(f"unknown node id {origin!r} at line {lineno}")
        if dest not in node_index:
            raise DataError(f"unknown node id {dest!r} at line {lineno}")
        try:
            count = int(row[3].strip())
        except ValueError:
            raise DataError(f"malformed count {row[3]!r} at line {lineno}") from None
        if count < 0:
            raise DataError(f"negative count {count} at line {lineno}")
        key = (day, node_index[origin], node_index[dest])
        cells[key] = cells.get(key, 0.0) + count
        n_records += 1

    if n_records == 0:
        raise DataError("no trip records in input")

    if date_range is not None:
        dates = date_span(date_range[0], date_range[1])
        allowed = set(dates)
        outside = sorted({d for d, _, _ in cells if d not in allowed})
        if outside:
            raise DataError(
                f"trip records outside declared range {date_range[0]}..{date_range[1]}: "
                f"{[format_date(d) for d in outside]}"
            )
    else:
        dates = sorted({d for d, _, _ in cells})

    day_index = {d: k for k, d in enumerate(dates)}
    n = len(node_registry)
    flows = np.zeros((len(dates), n, n), dtype=np.float64)
    for (day, i, j), count in cells.items():
        flows[day_index[day], i, j] = count
    return ODTensor(dates, list(node_registry), flows)


# ---------------------------------------------------------------------------
# Normalization and node features


def normalize_spatial(tensor: ODTensor) -> ODTensor:
    """Divide each day's matrix by that day's total flow (sums to 1).

    Neutralizes slow drift in overall ridership volume so that days are
    compared by spatial pattern only. A zero-flow day is a hard error:
    silently dropping it would desynchronize labels from features.
    """
    totals = tensor.day_totals()
    zero = np.flatnonzero(totals == 0.0)
    if zero.size:
        raise DataError(f"zero-flow day {format_date(tensor.dates[int(zero[0])])}")
    flows = tensor.flows / totals[:, None, None]
    return ODTensor(list(tensor.dates), list(tensor.node_ids), flows)


def node_features(tensor: ODTensor) -> FeatureMatrix:
    """Per-day in/out totals per node, flattened node-major.

    Row d is the row-major flattening of the day's N x 2 block
    [outgoing_sum, incoming_sum] per node, i.e. columns are
    (out_0, in_0, out_1, in_1, ...). Sums are taken on the raw tensor;
    row normalization is a separate step (sum_normalize_rows).
    """
    out_sums = tensor.flows.sum(axis=2)  # (D, N)
    in_sums = tensor.flows.sum(axis=1)  # (D, N)
    blocks = np.stack([out_sums, in_sums], axis=2)  # (D, N, 2)
    return FeatureMatrix(list(tensor.dates), blocks.reshape(tensor.n_days, -1))


def node_feature_blocks(fm: FeatureMatrix, n_nodes: int) -> np.ndarray:
    """Reshape a node-feature matrix back to per-day (N, 2) blocks."""
    if fm.n_dims != 2 * n_nodes:
        raise DataError(f"expected {2 * n_nodes} node-feature columns, got {fm.n_dims}")
    return fm.values.reshape(fm.n_days, n_nodes, 2)


def sum_normalize_rows(fm: FeatureMatrix) -> FeatureMatrix:
    """Divide each day's feature row by its sum (same drift correction as
    normalize_spatial, applied to the node configuration)."""
    sums = fm.values.sum(axis=1)
    zero = np.flatnonzero(sums == 0.0)
    if zero.size:
        raise DataError(f"zero-flow day {format_date(fm.dates[int(zero[0])])}")
    return fm.with_values(fm.values / sums[:, None])


# ---------------------------------------------------------------------------
# Calendars


def build_calendar(
    dates: Sequence[dt.date],
    holiday_list: Iterable[dt.date] = (),
    weekend_days: frozenset[int] = DEFAULT_WEEKEND_DAYS,
) -> DayCalendar:
    """Label every date weekday (0) or weekend (1) and flag holidays.

    weekend_days uses date.weekday() numbering (Mon=0..Sun=6) and defaults
    to {Saturday, Sunday}; override for other locales.
    """
    dates = list(dates)
    holiday_set = set(holiday_list)
    outside = sorted(holiday_set - set(dates))
    if outside:
        raise DataError(
            f"holidays outside the date range: {[format_date(d) for d in outside]}"
        )
    weekday_class = np.array(
        [1 if d.weekday() in weekend_days else 0 for d in dates], dtype=np.int64
    )
    is_holiday = np.array([d in holiday_set for d in dates], dtype=bool)
    return DayCalendar(dates, weekday_class, is_holiday)


# ---------------------------------------------------------------------------
# Synthetic data


def _regime_means(config: SyntheticConfig, rng: np.random.Generator):
    """Weekday/weekend mean matrices sharing a planted block structure."""
    n = config.n_nodes
    n_blocks = min(config.n_blocks, n)
    blocks = np.arange(n) * n_blocks // n
    boost = np.where(blocks[:, None] == blocks[None, :], config.block_boost, 1.0)
    weekday_shape = boost * rng.uniform(0.5, 1.5, size=(n, n))
    weekend_shape = boost * rng.uniform(0.5, 1.5, size=(n, n))
    total = config.weekday_base_flow * n * n
    mean_weekday = total * weekday_shape / weekday_shape.sum()
    mean_weekend = config.weekend_scale * total * weekend_shape / weekend_shape.sum()
    return mean_weekday, mean_weekend, blocks


def generate_synthetic(
    config: SyntheticConfig,
    weekend_days: frozenset[int] = DEFAULT_WEEKEND_DAYS,
) -> tuple[ODTensor, DayCalendar]:
    """Generate a deterministic synthetic OD tensor plus its calendar.

    Weekday days are drawn around weekday_base_flow per OD pair; weekend
    days use an independent spatial pattern scaled by weekend_scale, so
    with noise_scale=0 a weekend total is exactly weekend_scale times a
    weekday total. Entries get multiplicative lognormal noise with unit
    mean. Anomaly dates have their mean matrix blended toward the opposite
    regime: mean = (1-s) * own + s * opposite with s = anomaly_strength,
    and are flagged is_holiday in the calendar.
    """
    rng = np.random.default_rng(config.seed)
    mean_weekday, mean_weekend, _ = _regime_means(config, rng)
    dates = config.date_range()
    calendar = build_calendar(dates, config.anomaly_dates, weekend_days)

    s = config.anomaly_strength
    sigma = config.noise_scale
    n = config.n_nodes
    flows = np.empty((config.n_days, n, n), dtype=np.float64)
    for d in range(config.n_days):
        own, opp = (
            (mean_weekend, mean_weekday)
            if calendar.weekday_class[d]
            else (mean_weekday, mean_weekend)
        )
        mean = (1.0 - s) * own + s * opp if calendar.is_holiday[d] else own
        noise = np.exp(sigma * rng.standard_normal((n, n)) - 0.5 * sigma * sigma)
        flows[d] = mean * noise
    return ODTensor(dates, synthetic_node_ids(config.n_nodes), flows), calendar


def synthetic_node_ids(n_nodes: int) -> list[str]:
    width = len(str(n_nodes - 1))
    return [f"n{i:0{width}d}" for i in range(n_nodes)]


def choose_anomaly_dates(
    n_anomalies: int,
    n_days: int,
    seed: int,
    start_date: dt.date = dt.date(2017, 1, 2),
    weekdays_only: bool = True,
    weekend_days: frozenset[int] = DEFAULT_WEEKEND_DAYS,
) -> frozenset[dt.date]:
    """Pick n distinct anomaly dates uniformly at random (seeded).

    By default only weekdays are eligible: the planted regime swap mimics
    holidays, which disrupt commute days.
    """
    candidates = [start_date + dt.timedelta(days=i) for i in range(n_days)]
    if weekdays_only:
        candidates = [d for d in candidates if d.weekday() not in weekend_days]
    if n_anomalies > len(candidates):
        raise ConfigError(
            f"cannot plant {n_anomalies} anomalies in {len(candidates)} eligible days"
        )
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=n_anomalies, replace=False)
    return frozenset(candidates[int(i)] for i in picks)


def synthetic_physical_graph(config: SyntheticConfig) -> PhysicalGraph:
    """Planted transit topology matching the generator's block structure.

    Nodes within a block form a cycle; consecutive blocks are linked by one
    edge, so the graph is connected. Deterministic (no randomness needed).
    """
    n = config.n_nodes
    node_ids = synthetic_node_ids(n)
    n_blocks = min(config.n_blocks, n)
    blocks = np.arange(n) * n_blocks // n
    edges: list[tuple[str, str]] = []
    members = [np.flatnonzero(blocks == b) for b in range(n_blocks)]
    for m in members:
        if len(m) == 2:
            edges.append((node_ids[m[0]], node_ids[m[1]]))
        elif len(m) > 2:
            for a, b in zip(m, np.roll(m, -1)):
                edges.append((node_ids[a], node_ids[b]))
    for b in range(n_blocks):
        nxt = members[(b + 1) % n_blocks]
        if len(members[b]) and len(nxt) and n_blocks > 1:
            edges.append((node_ids[members[b][0]], node_ids[nxt[0]]))
    return PhysicalGraph.from_edges(node_ids, edges)


# ---------------------------------------------------------------------------
# CSV writers (trip/flow serialization)


def write_trip_csv(tensor: ODTensor, stream) -> None:
    """Write a tensor as integer trip records; zero cells are omitted.

    Real-valued flows are rounded to the nearest rider count, so this is a
    lossy serialization of synthetic tensors.
    """
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["date", "origin", "destination", "count"])
    for d, day in enumerate(tensor.dates):
        day_str = format_date(day)
        counts = np.rint(tensor.flows[d]).astype(np.int64)
        for i, j in zip(*np.nonzero(counts)):
            writer.writerow([day_str, tensor.node_ids[i], tensor.node_ids[j], int(counts[i, j])])


def write_flow_csv(tensor: ODTensor, stream) -> None:
    """Write a real-valued tensor densely (every cell, 17 significant digits)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["date", "origin", "destination", "flow"])
    for d, day in enumerate(tensor.dates):
        day_str = format_date(day)
        for i, origin in enumerate(tensor.node_ids):
            for j, dest in enumerate(tensor.node_ids):
                writer.writerow([day_str, origin, dest, fmt_float(tensor.flows[d, i, j])])


def read_flow_csv(source) -> ODTensor:
    """Read a dense flow CSV back into an ODTensor."""
    rows = iter(_open_rows(source))
    header = next(rows, None)
    _check_header(header, ["date", "origin", "destination", "flow"], "flow")
    cells: dict[tuple[dt.date, str, str], float] = {}
    node_order: list[str] = []
    seen_nodes: set[str] = set()
    for lineno, row in enumerate(rows, start=1):
        if not row:
            continue
        if len(row) < 4:
            raise DataError(f"flow row with {len(row)} fields at line {lineno}")
        day = parse_date(row[0])
        origin, dest = row[1].strip(), row[2].strip()
        for node in (origin, dest):
            if node not in seen_nodes:
                seen_nodes.add(node)
                node_order.append(node)
        try:
            value = float(row[3])
        except ValueError:
            raise DataError(f"malformed flow {row[3]!r} at line {lineno}") from None
        cells[(day, origin, dest)] = value
    if not cells:
        raise DataError("no flow records in input")
    dates = sorted({d for d, _, _ in cells})
    index = {n: i for i, n in enumerate(node_order)}
    day_index = {d: k for k, d in enumerate(dates)}
    flows = np.zeros((len(dates), len(node_order), len(node_order)), dtype=np.float64)
    for (day, origin, dest), value in cells.items():
        flows[day_index[day], index[origin], index[dest]] = value
    return ODTensor(dates, node_order, flows)


def write_calendar_csv(calendar: DayCalendar, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["date", "weekday_class", "is_holiday"])
    for d, wc, hol in zip(calendar.dates, calendar.weekday_class, calendar.is_holiday):
        writer.writerow([format_date(d), int(wc), int(hol)])


def read_calendar_csv(source) -> DayCalendar:
    rows = iter(_open_rows(source))
    header = next(rows, None)
    _check_header(header, ["date", "weekday_class", "is_holiday"], "calendar")
    dates: list[dt.date] = []
    weekday_class: list[int] = []
    is_holiday: list[bool] = []
    for row in rows:
        if not row:
            continue
        dates.append(parse_date(row[0]))
        weekday_class.append(int(row[1]))
        is_holiday.append(bool(int(row[2])))
    if not dates:
        raise DataError("no calendar rows in input")
    return DayCalendar(dates, np.array(weekday_class), np.array(is_holiday))
