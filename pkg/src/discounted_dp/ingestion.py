"""Smart-meter CSV ingestion, daily resampling and synthetic data.

Long input format (one reading per row)::

    customer_id,timestamp,kwh
    C001,2012-07-01 00:00,0.412

Timestamps are naive local time, ``YYYY-MM-DD HH:MM``; a day runs from
midnight to midnight. The wide format has ``customer_id`` first and one column
per slot headed ``YYYY-MM-DDTHH:MM``. :func:`parse_ausgrid_csv` reads the
published Ausgrid solar-home file directly.

The daily table written by :func:`write_daily_csv` is long as well::

    customer_id,date,kwh
    C001,2012-07-01,14.2

with an empty ``kwh`` cell for a missing day.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .query import BoundsViolation, EvolvingDataset
from .rng import spawn

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M"
WIDE_SLOT_FORMAT = "%Y-%m-%dT%H:%M"
LONG_HEADER = ["customer_id", "timestamp", "kwh"]
DAILY_HEADER = ["customer_id", "date", "kwh"]
DEFAULT_BOUNDS = (0.0, 200.0)


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateReading(ParseError):
    pass


@dataclass(frozen=True)
class RawReading:
    customer_id: str
    timestamp: dt.datetime
    kwh: float


def fmt(value: float) -> str:
    """Nine significant digits, empty for a missing value."""
    if value is None or math.isnan(value):
        return ""
    return f"{value:.9g}"


def _parse_kwh(text: str, line: int) -> float:
    try:
        kwh = float(text)
    except ValueError:
        raise ParseError(line, f"kwh {text!r} is not a number") from None
    if not math.isfinite(kwh) or kwh < 0:
        raise ParseError(line, f"kwh {text!r} must be a finite value >= 0")
    return kwh


def _parse_time(text: str, fmt_: str, line: int) -> dt.datetime:
    try:
        return dt.datetime.strptime(text.strip(), fmt_)
    except ValueError:
        raise ParseError(line, f"timestamp {text!r} does not match {fmt_}") from None


def _check_duplicates(readings: Iterable[tuple[int, RawReading]]) -> list[RawReading]:
    seen: dict[tuple[str, dt.datetime], int] = {}
    out = []
    for line, r in readings:
        key = (r.customer_id, r.timestamp)
        if key in seen:
            raise DuplicateReading(
                line,
                f"reading for {r.customer_id} at {r.timestamp:{TIMESTAMP_FORMAT}} "
                f"already given on line {seen[key]}",
            )
        seen[key] = line
        out.append(r)
    return out


def parse_long_csv(path) -> list[RawReading]:
    def rows():
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != LONG_HEADER:
                raise ParseError(1, f"header must be {','.join(LONG_HEADER)}, got {header}")
            for row in reader:
                line = reader.line_num
                if not row:
                    continue
                if len(row) != 3:
                    raise ParseError(line, f"expected 3 fields, got {len(row)}")
                cid, ts, kwh = row
                if not cid.strip():
                    raise ParseError(line, "empty customer_id")
                yield line, RawReading(
                    cid.strip(),
                    _parse_time(ts, TIMESTAMP_FORMAT, line),
                    _parse_kwh(kwh, line),
                )

    return _check_duplicates(rows())


def write_long_csv(readings: Iterable[RawReading], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LONG_HEADER)
        for r in readings:
            w.writerow([r.customer_id, r.timestamp.strftime(TIMESTAMP_FORMAT), repr(r.kwh)])


def parse_wide_csv(path) -> list[RawReading]:
    """Convert the wide layout (``customer_id`` then one column per slot). Blank cells are skipped."""

    def rows():
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0].strip() != "customer_id":
                raise ParseError(1, "first header must be customer_id")
            slots = [_parse_time(h, WIDE_SLOT_FORMAT, 1) for h in header[1:]]
            for row in reader:
                line = reader.line_num
                if not row:
                    continue
                if len(row) != len(header):
                    raise ParseError(line, f"expected {len(header)} fields, got {len(row)}")
                cid = row[0].strip()
                if not cid:
                    raise ParseError(line, "empty customer_id")
                for ts, cell in zip(slots, row[1:]):
                    if cell.strip():
                        yield line, RawReading(cid, ts, _parse_kwh(cell, line))

    return _check_duplicates(rows())


def parse_ausgrid_csv(path, categories: Sequence[str] = ("GC",)) -> list[RawReading]:
    """Read the Ausgrid "Solar home electricity data" CSV.

    Layout: an optional title row, then ``Customer, Generator Capacity,
    Postcode, Consumption Category, date, 0:30, 1:00, ..., 0:00[, Row Quality]``
    with dates as ``d/mm/yyyy``. Each half-hour column is labelled by the end
    of its interval, so slot ``i`` is stamped with its start time
    ``date + 30 min * i`` and stays inside the calendar day. Only the requested
    consumption categories are kept (``GC`` general consumption, ``CL``
    controlled load, ``GG`` gross generation); several categories for the same
    slot are summed.
    """
    wanted = {c.strip().upper() for c in categories}
    totals: dict[tuple[str, dt.datetime], float] = {}
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = None
        for row in reader:
            if row and row[0].strip().lower() == "customer":
                header = [h.strip() for h in row]
                break
        if header is None:
            raise ParseError(1, "no header row starting with 'Customer'")
        try:
            cat_col = header.index("Consumption Category")
            date_col = header.index("date")
        except ValueError as exc:
            raise ParseError(reader.line_num, str(exc)) from None
        first_slot = date_col + 1
        n_slots = 48
        seen_rows: dict[tuple[str, str, dt.date], int] = {}
        for row in reader:
            line = reader.line_num
            if not row or not row[0].strip():
                continue
            if len(row) < first_slot + n_slots:
                raise ParseError(line, f"expected at least {first_slot + n_slots} fields")
            category = row[cat_col].strip().upper()
            if category not in wanted:
                continue
            cid = row[0].strip()
            try:
                day = dt.datetime.strptime(row[date_col].strip(), "%d/%m/%Y")
            except ValueError:
                raise ParseError(line, f"date {row[date_col]!r} is not d/mm/yyyy") from None
            row_key = (cid, category, day.date())
            if row_key in seen_rows:
                raise DuplicateReading(
                    line, f"{cid} {category} {day:%Y-%m-%d} already given on line {seen_rows[row_key]}"
                )
            seen_rows[row_key] = line
            for i in range(n_slots):
                cell = row[first_slot + i]
                if not cell.strip():
                    continue
                key = (cid, day + dt.timedelta(minutes=30 * i))
                totals[key] = totals.get(key, 0.0) + _parse_kwh(cell, line)
    return [RawReading(cid, ts, kwh) for (cid, ts), kwh in totals.items()]


def resample_daily(readings: Sequence[RawReading], aggregation: str = "sum") -> pd.DataFrame:
    """Customer x day table of daily totals (or means); NaN where a customer has no reading.

    Rows are sorted customer ids, columns the sorted union of observed days.
    """
    if not readings:
        raise ValueError("no readings to resample")
    if aggregation not in ("sum", "mean"):
        raise ValueError(f"aggregation must be 'sum' or 'mean', got {aggregation!r}")
    frame = pd.DataFrame(
        {
            "customer_id": [r.customer_id for r in readings],
            "day": [r.timestamp.date() for r in readings],
            "kwh": [r.kwh for r in readings],
        }
    )
    table = frame.groupby(["customer_id", "day"])["kwh"].agg(aggregation).unstack("day")
    return table.sort_index(axis=0).sort_index(axis=1)


def _day_range(date_range) -> list[dt.date]:
    start, end = (d if isinstance(d, dt.date) else dt.date.fromisoformat(str(d)) for d in date_range)
    if end < start:
        raise ValueError(f"empty date range {start}..{end}")
    return [start + dt.timedelta(days=i) for i in range((end - start).days + 1)]


def to_evolving_dataset(
    table: pd.DataFrame,
    bounds: tuple[float, float] = DEFAULT_BOUNDS,
    date_range: tuple | None = None,
) -> EvolvingDataset:
    """Build the dataset from a customer x day table.

    ``date_range`` (inclusive ``(start, end)``) selects the columns; days in the
    range with no data become missing columns.
    """
    table = table.sort_index(axis=0).sort_index(axis=1)
    if date_range is not None:
        table = table.reindex(columns=_day_range(date_range))
    if table.shape[0] == 0 or table.shape[1] == 0:
        raise ValueError("daily table is empty")
    values = table.to_numpy(dtype=float)
    lo, hi = bounds
    bad = np.argwhere(~np.isnan(values) & ((values < lo) | (values > hi)))
    if bad.size:
        i, j = bad[0]
        cid, day = table.index[i], table.columns[j]
        raise BoundsViolation(
            f"{cid} on {day}: {values[i, j]!r} outside [{lo}, {hi}]",
            index=(cid, str(day)),
            value=float(values[i, j]),
        )
    labels = [str(d) for d in table.columns]
    return EvolvingDataset.from_matrix(
        values, tuple(bounds), labels=labels, row_ids=[str(c) for c in table.index]
    )


def dataset_to_table(ds: EvolvingDataset) -> pd.DataFrame:
    rows = list(ds.row_ids) or [str(i + 1) for i in range(ds.n)]
    return pd.DataFrame(ds.matrix(), index=pd.Index(rows, name="customer_id"), columns=list(ds.labels))


def daily_csv_text(table: pd.DataFrame) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DAILY_HEADER)
    values = table.to_numpy(dtype=float)
    for i, cid in enumerate(table.index):
        for j, day in enumerate(table.columns):
            w.writerow([cid, str(day), fmt(values[i, j])])
    return buf.getvalue()


def write_daily_csv(table: pd.DataFrame, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(daily_csv_text(table))


def read_daily_csv(path) -> pd.DataFrame:
    """Inverse of :func:`write_daily_csv`; dates become ``datetime.date`` columns."""
    cells: dict[tuple[str, dt.date], float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DAILY_HEADER:
            raise ParseError(1, f"header must be {','.join(DAILY_HEADER)}, got {header}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(line, f"expected 3 fields, got {len(row)}")
            cid, day_text, kwh = (c.strip() for c in row)
            try:
                day = dt.date.fromisoformat(day_text)
            except ValueError:
                raise ParseError(line, f"date {day_text!r} is not YYYY-MM-DD") from None
            if (cid, day) in cells:
                raise DuplicateReading(line, f"{cid} on {day} appears twice")
            if kwh:
                try:
                    cells[(cid, day)] = float(kwh)
                except ValueError:
                    raise ParseError(line, f"kwh {kwh!r} is not a number") from None
            else:
                cells[(cid, day)] = np.nan
    if not cells:
        raise ParseError(1, "daily table has no rows")
    series = pd.Series(cells)
    series.index = series.index.set_names(["customer_id", "day"])
    return series.unstack("day").sort_index(axis=0).sort_index(axis=1)


@dataclass(frozen=True)
class SyntheticConfig:
    """Stand-in for a year of household daily consumption.

    Entry ``(i, d)`` is ``base_load * (1 + seasonal_amplitude * sin(2 pi d / 365))
    + offset_i + noise_id`` clipped into ``bounds``, where ``offset_i`` is a fixed
    per-household level drawn with sd ``household_sd`` and ``noise_id`` is daily
    noise with sd ``noise_sd``.
    """

    n: int = 300
    days: int = 365
    seed: int = 0
    base_load: float = 20.0
    seasonal_amplitude: float = 0.25
    noise_sd: float = 4.0
    household_sd: float = 6.0
    bounds: tuple[float, float] = DEFAULT_BOUNDS
    start_date: dt.date = dt.date(2012, 7, 1)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if int(self.days) != self.days or self.days < 1:
            raise ValueError(f"days must be a positive integer, got {self.days}")
        if self.noise_sd < 0 or self.household_sd < 0:
            raise ValueError("standard deviations must be >= 0")
        lo, hi = self.bounds
        if not lo < hi:
            raise ValueError(f"bounds must satisfy lo < hi, got {self.bounds}")


def gen_synthetic(cfg: SyntheticConfig) -> EvolvingDataset:
    offsets_rng, noise_rng = spawn(cfg.seed, 2)
    day = np.arange(cfg.days, dtype=float)
    season = cfg.base_load * (1.0 + cfg.seasonal_amplitude * np.sin(2.0 * np.pi * day / 365.0))
    offsets = offsets_rng.normal(0.0, cfg.household_sd, size=(cfg.n, 1))
    noise = noise_rng.normal(0.0, cfg.noise_sd, size=(cfg.n, cfg.days))
    values = np.clip(season[None, :] + offsets + noise, *cfg.bounds)
    labels = [str(cfg.start_date + dt.timedelta(days=i)) for i in range(cfg.days)]
    width = len(str(cfg.n))
    row_ids = [f"H{i + 1:0{width}d}" for i in range(cfg.n)]
    return EvolvingDataset.from_matrix(values, tuple(cfg.bounds), labels=labels, row_ids=row_ids)


def load_dataset(path, bounds: tuple[float, float] = DEFAULT_BOUNDS) -> EvolvingDataset:
    return to_evolving_dataset(read_daily_csv(path), bounds)
