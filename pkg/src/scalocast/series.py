"""Hourly series containers, meter ingestion and district aggregation.

Timestamps are held in UTC. Civil dates (forecast days, holidays) are derived
through a fixed IANA zone, so ``timestamp(i + 24) - timestamp(i)`` is always
exactly 24 hours, DST or not.
"""
from __future__ import annotations

import csv
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence
from zoneinfo import ZoneInfo

import numpy as np

from .errors import ConfigError, DataError, EmptyInputError

log = logging.getLogger(__name__)

HOUR = timedelta(hours=1)
WEATHER_FEATURES = ("t_amb", "t_min", "t_max", "t_feels", "t_dew")


class Unit(str, Enum):
    KWH = "kWh"
    CELSIUS = "degC"
    DIMENSIONLESS = "1"


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _readonly(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HourlySeries:
    """Gap-aware hourly sequence. ``mask[i]`` is True where the value is missing."""

    start: datetime
    values: np.ndarray
    unit: Unit = Unit.KWH
    mask: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        start = self.start
        if start.tzinfo is None:
            start = start.replace(tzinfo=timezone.utc)
        start = start.astimezone(timezone.utc)
        if start.minute or start.second or start.microsecond:
            raise DataError(f"series start {start} is not on an hour boundary")
        values = _readonly(self.values, np.float64)
        if values.ndim != 1:
            raise DataError("series values must be one-dimensional")
        mask = np.zeros(len(values), bool) if self.mask is None else self.mask
        mask = _readonly(mask, bool)
        if mask.shape != values.shape:
            raise DataError("values and mask differ in length")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "unit", Unit(self.unit))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end(self) -> datetime:
        """Timestamp one hour past the last element."""
        return self.start + len(self) * HOUR

    def timestamp(self, i: int) -> datetime:
        return self.start + int(i) * HOUR

    def timestamps(self) -> list[datetime]:
        return [self.timestamp(i) for i in range(len(self))]

    def index_of(self, ts: datetime) -> int:
        delta = ts.astimezone(timezone.utc) - self.start
        hours, rem = divmod(delta, HOUR)
        if rem:
            raise DataError(f"{ts} is not on the hourly grid of this series")
        return int(hours)

    def with_values(self, values, mask=None) -> "HourlySeries":
        return HourlySeries(self.start, values, self.unit,
                            self.mask if mask is None else mask, self.name)

    def window(self, i: int, j: int) -> "HourlySeries":
        return HourlySeries(self.timestamp(i), self.values[i:j], self.unit,
                            self.mask[i:j], self.name)

    def filled(self, fill=np.nan) -> np.ndarray:
        out = self.values.copy()
        out[self.mask] = fill
        return out

    def interpolated(self) -> np.ndarray:
        """Values with masked entries linearly interpolated (edges held constant)."""
        out = self.values.copy()
        if self.mask.any():
            good = ~self.mask
            if not good.any():
                raise DataError(f"series {self.name!r} is entirely masked")
            idx = np.arange(len(out))
            out[self.mask] = np.interp(idx[self.mask], idx[good], out[good])
        return out


@dataclass(frozen=True)
class DistrictDemand:
    """Per-meter averaged district demand and the meter count behind each hour."""

    demand: HourlySeries
    meter_count: np.ndarray

    def __post_init__(self):
        counts = _readonly(self.meter_count, np.int64)
        if counts.shape != self.demand.values.shape:
            raise DataError("meter_count and demand differ in length")
        if np.any(counts[~self.demand.mask] < 1):
            raise DataError("unmasked demand hour with fewer than one meter")
        object.__setattr__(self, "meter_count", counts)

    def total(self) -> np.ndarray:
        return self.demand.values * self.meter_count


@dataclass(frozen=True)
class HolidayCalendar:
    entries: tuple[tuple[date, str], ...] = ()
    _by_date: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple(sorted((d, str(n)) for d, n in self.entries))
        by_date: dict[date, str] = {}
        for d, name in entries:
            if d in by_date and by_date[d] != name:
                raise DataError(f"holiday date {d} maps to both {by_date[d]!r} and {name!r}")
            by_date[d] = name
        object.__setattr__(self, "entries", tuple(sorted(by_date.items())))
        object.__setattr__(self, "_by_date", by_date)

    def __contains__(self, d: date) -> bool:
        return d in self._by_date

    def __len__(self) -> int:
        return len(self.entries)

    def name_of(self, d: date) -> str | None:
        return self._by_date.get(d)

    def previous_occurrence(self, d: date) -> date | None:
        """Most recent earlier date carrying the same holiday name as ``d``."""
        name = self._by_date.get(d)
        if name is None:
            return None
        earlier = [e for e, n in self.entries if n == name and e < d]
        return earlier[-1] if earlier else None


# ---------------------------------------------------------------- calendar

def local_midnight_index(series: HourlySeries, day: date, tz: str) -> int:
    """Index of local 00:00 on ``day`` relative to ``series.start`` (may fall outside the series)."""
    midnight = datetime(day.year, day.month, day.day, tzinfo=ZoneInfo(tz))
    delta = midnight.astimezone(timezone.utc) - series.start
    hours, rem = divmod(delta, HOUR)
    if rem:
        raise ConfigError(f"time zone {tz} has a non-whole-hour offset")
    return int(hours)


def local_dates(series: HourlySeries, tz: str) -> list[date]:
    """Civil dates touched by the series, in order."""
    zone = ZoneInfo(tz)
    first = series.start.astimezone(zone).date()
    last = (series.end - HOUR).astimezone(zone).date()
    return [first + timedelta(days=k) for k in range((last - first).days + 1)]


def local_hour_of_day(series: HourlySeries, tz: str) -> np.ndarray:
    zone = ZoneInfo(tz)
    return np.array([series.timestamp(i).astimezone(zone).hour for i in range(len(series))])


# ---------------------------------------------------------------- operations

def diff_cumulative(readings: HourlySeries) -> tuple[HourlySeries, list[int]]:
    """Hourly consumption from cumulative meter readings.

    Returns the differenced series and the indices whose difference was
    negative (meter reset or rollback). Those indices are masked, not clipped.
    A difference touching a masked reading is masked as well.
    """
    if len(readings) < 2:
        raise EmptyInputError("need at least two cumulative readings")
    v = readings.values
    out = v[1:] - v[:-1]
    mask = readings.mask[1:] | readings.mask[:-1]
    negative = np.flatnonzero((out < 0) & ~mask)
    mask = mask | (out < 0)
    out = np.where(mask, 0.0, out)
    if len(negative):
        log.warning("%s: %d negative hourly differences masked", readings.name or "meter",
                    len(negative))
    return (HourlySeries(readings.start + HOUR, out, readings.unit, mask, readings.name),
            [int(i) for i in negative])


def align_series(series: Sequence[HourlySeries]) -> list[HourlySeries]:
    """Extend every series to the union span, masking the added hours."""
    if not series:
        raise EmptyInputError("no series to align")
    start = min(s.start for s in series)
    end = max(s.end for s in series)
    n = (end - start) // HOUR
    out = []
    for s in series:
        off = (s.start - start) // HOUR
        values = np.zeros(n)
        mask = np.ones(n, bool)
        values[off:off + len(s)] = s.values
        mask[off:off + len(s)] = s.mask
        out.append(HourlySeries(start, values, s.unit, mask, s.name))
    return out


def aggregate_district(meters: Iterable[HourlySeries]) -> DistrictDemand:
    """Average hourly consumption over the meters reporting at each hour."""
    meters = list(meters)
    if not meters:
        raise EmptyInputError("no meters to aggregate")
    first = meters[0]
    if any(m.start != first.start or len(m) != len(first) for m in meters):
        raise DataError("meters do not share a calendar span; call align_series first")
    values = np.stack([m.values for m in meters])
    valid = ~np.stack([m.mask for m in meters])
    counts = valid.sum(axis=0)
    sums = np.where(valid, values, 0.0).sum(axis=0)
    demand = np.divide(sums, counts, out=np.zeros(len(first)), where=counts > 0)
    series = HourlySeries(first.start, demand, Unit.KWH, counts == 0, "demand")
    return DistrictDemand(series, counts)


def rescale_total(forecast, meter_count) -> np.ndarray:
    """Per-meter kWh back to district totals."""
    meter_count = np.asarray(meter_count)
    if np.any(meter_count < 1):
        raise DataError("meter_count must be >= 1")
    return np.asarray(forecast, dtype=np.float64) * meter_count


# ---------------------------------------------------------------- file IO

@dataclass
class IngestReport:
    files: list[str] = field(default_factory=list)
    meters: int = 0
    rows: int = 0
    negative_diffs: dict[str, list[int]] = field(default_factory=dict)
    ignored_columns: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "files": self.files,
            "meters": self.meters,
            "rows": self.rows,
            "negative_diff_count": sum(len(v) for v in self.negative_diffs.values()),
            "negative_diffs": {k: v for k, v in sorted(self.negative_diffs.items())},
            "ignored_columns": sorted(set(self.ignored_columns)),
        }


def _read_rows(path, required: Sequence[str], optional: Sequence[str] = (),
               report: IngestReport | None = None):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyInputError(f"{path}: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        extra = [c for c in header if c not in required and c not in optional]
        if extra:
            log.warning("%s: ignoring extra columns %s", path, extra)
            if report is not None:
                report.ignored_columns.extend(extra)
        cols = {c: header.index(c) for c in (*required, *optional) if c in header}
        rows = [{c: row[i] for c, i in cols.items()} for row in reader if row]
    return rows


def _to_series(stamps: list[datetime], values: list[float], unit: Unit, name: str) -> HourlySeries:
    if not stamps:
        raise EmptyInputError(f"no rows for {name!r}")
    order = np.argsort(np.array([s.timestamp() for s in stamps]))
    start = stamps[order[0]]
    n = (max(stamps) - start) // HOUR + 1
    out = np.zeros(n)
    mask = np.ones(n, bool)
    for ts, v in zip(stamps, values):
        i = (ts - start) // HOUR
        if (ts - start) % HOUR:
            raise DataError(f"{name}: timestamp {ts} is not on the hour")
        if not mask[i]:
            raise DataError(f"{name}: duplicate timestamp {ts}")
        if np.isfinite(v):
            out[i] = v
            mask[i] = False
    return HourlySeries(start, out, unit, mask, name)


def _float(text: str) -> float:
    text = text.strip()
    return float(text) if text else float("nan")


def read_meter_csv(path, report: IngestReport | None = None) -> dict[str, HourlySeries]:
    """Cumulative readings per meter from ``timestamp,meter_id,reading_kwh``."""
    rows = _read_rows(path, ("timestamp", "meter_id", "reading_kwh"), report=report)
    grouped: dict[str, tuple[list, list]] = defaultdict(lambda: ([], []))
    for r in rows:
        stamps, vals = grouped[r["meter_id"].strip()]
        stamps.append(parse_timestamp(r["timestamp"]))
        vals.append(_float(r["reading_kwh"]))
    if report is not None:
        report.rows += len(rows)
    return {m: _to_series(s, v, Unit.KWH, m) for m, (s, v) in sorted(grouped.items())}


def ingest_meter_files(paths: Sequence, jobs: int = 1) -> tuple[DistrictDemand, IngestReport]:
    """Read meter CSVs (in parallel if asked), difference, align and aggregate.

    Files are merged in sorted-path order so the result does not depend on
    scheduling. A meter appearing in several files must not overlap itself.
    """
    paths = sorted(str(p) for p in paths)
    report = IngestReport(files=paths)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        per_file = list(pool.map(lambda p: read_meter_csv(p, report), paths))
    cumulative: dict[str, list[HourlySeries]] = defaultdict(list)
    for meters in per_file:
        for meter_id, s in meters.items():
            cumulative[meter_id].append(s)
    hourly = []
    for meter_id in sorted(cumulative):
        parts = align_series(cumulative[meter_id])
        if len(parts) > 1 and np.any(np.sum([~p.mask for p in parts], axis=0) > 1):
            raise DataError(f"meter {meter_id} has overlapping readings across files")
        values = np.sum([np.where(p.mask, 0.0, p.values) for p in parts], axis=0)
        mask = np.all([p.mask for p in parts], axis=0)
        merged = HourlySeries(parts[0].start, values, Unit.KWH, mask, meter_id)
        diffed, negative = diff_cumulative(merged)
        if negative:
            report.negative_diffs[meter_id] = negative
        hourly.append(diffed)
    report.meters = len(hourly)
    return aggregate_district(align_series(hourly)), report


def read_demand_csv(path) -> DistrictDemand:
    """District totals from ``timestamp,demand[,meter_count]``.

    ``demand`` is the district total; it is divided by ``meter_count`` (1 when
    absent) to give the per-meter series used for modelling.
    """
    rows = _read_rows(path, ("timestamp", "demand"), ("meter_count",))
    stamps = [parse_timestamp(r["timestamp"]) for r in rows]
    totals = [_float(r["demand"]) for r in rows]
    has_count = rows and "meter_count" in rows[0]
    counts = [int(float(r["meter_count"])) if has_count and r["meter_count"].strip() else 1
              for r in rows]
    total = _to_series(stamps, totals, Unit.KWH, "demand")
    count_series = _to_series(stamps, counts, Unit.DIMENSIONLESS, "meter_count")
    c = np.where(count_series.mask, 1, count_series.values).astype(np.int64)
    c = np.maximum(c, 1)
    per_meter = total.with_values(total.values / c)
    return DistrictDemand(per_meter, c)


def write_demand_csv(path, demand: DistrictDemand) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("timestamp,demand,meter_count\n")
        tot = demand.total()
        for i in range(len(demand.demand)):
            value = "" if demand.demand.mask[i] else f"{tot[i]:.6f}"
            fh.write(f"{format_timestamp(demand.demand.timestamp(i))},{value},"
                     f"{int(demand.meter_count[i])}\n")


def read_weather_csv(path) -> HourlySeries:
    """A single weather feature from ``timestamp,<feature_name>``."""
    with open(path, encoding="utf-8") as fh:
        header = [h.strip() for h in fh.readline().split(",")]
    features = [h for h in header if h in WEATHER_FEATURES]
    if not features:
        raise DataError(f"{path}: no known weather column among {header}")
    name = features[0]
    rows = _read_rows(path, ("timestamp", name))
    stamps = [parse_timestamp(r["timestamp"]) for r in rows]
    return _to_series(stamps, [_float(r[name]) for r in rows], Unit.CELSIUS, name)


def write_series_csv(path, series: HourlySeries, column: str | None = None) -> None:
    column = column or series.name or "value"
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(f"timestamp,{column}\n")
        for i in range(len(series)):
            value = "" if series.mask[i] else f"{series.values[i]:.6f}"
            fh.write(f"{format_timestamp(series.timestamp(i))},{value}\n")


def read_holidays(path) -> HolidayCalendar:
    """``YYYY-MM-DD,name`` per line; blank lines and ``#`` comments skipped."""
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        day, _, name = line.partition(",")
        try:
            entries.append((date.fromisoformat(day.strip()), name.strip()))
        except ValueError:
            raise DataError(f"{path}: bad holiday line {line!r}") from None
    return HolidayCalendar(tuple(entries))


def write_holidays(path, calendar: HolidayCalendar) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        for d, name in calendar.entries:
            fh.write(f"{d.isoformat()},{name}\n")
