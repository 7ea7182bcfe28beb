"""Feature processing: parse, clean, derive calendar fields, scale, window.

Record streams are quarter-hour slices (15-minute cadence).  The stages
turn a raw CSV into supervised windows of ``n_lag`` past steps and
``n_look_ahead`` future steps, with a z-score scaler fit on the training
split only.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone

import numpy as np

from .errors import ContractError, DataError

SLICE_MINUTES = 15
STEP = timedelta(minutes=SLICE_MINUTES)
SLICES_PER_HOUR = 4
SLICES_PER_DAY = 96

CSV_HEADER = ["slice_start_utc", "hour", "qtr", "day_of_week", "month",
              "dep_demand", "swim_observed_departures"]

TIMESTAMP_FMT = "%Y-%m-%dT%H:%M:%SZ"


def parse_timestamp(text):
    try:
        return datetime.strptime(text, TIMESTAMP_FMT).replace(tzinfo=timezone.utc)
    except ValueError:
        raise DataError(f"bad timestamp {text!r}; expected YYYY-MM-DDTHH:MM:SSZ") from None


def format_timestamp(ts):
    return ts.strftime(TIMESTAMP_FMT)


def derive_calendar(ts):
    """(hour, qtr, day_of_week, month) for a slice-start timestamp.

    qtr is 1..4 within the hour; day_of_week is 1=Monday..7=Sunday.
    """
    if ts.minute % SLICE_MINUTES != 0 or ts.second != 0 or ts.microsecond != 0:
        raise ContractError(f"timestamp {ts} is not on a 15-minute boundary")
    return ts.hour, ts.minute // SLICE_MINUTES + 1, ts.isoweekday(), ts.month


@dataclass
class QuarterHourRecord:
    """One 15-minute airport slice."""

    slice_start_utc: datetime
    hour: int
    qtr: int
    day_of_week: int
    month: int
    dep_demand: int
    swim_observed_departures: int | None = None

    @classmethod
    def at(cls, ts, dep_demand, swim=None):
        hour, qtr, dow, month = derive_calendar(ts)
        return cls(ts, hour, qtr, dow, month, dep_demand, swim)


def parse_records(source):
    """Read the documented CSV schema into timestamp-sorted records.

    ``source`` is a text stream or a string.  Calendar columns may be
    empty (they are derived) or populated (they are validated).  The swim
    column may be empty per row.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty input: missing CSV header") from None
    if [h.strip() for h in header] != CSV_HEADER:
        raise DataError(f"unexpected CSV header {header}; expected {CSV_HEADER}")

    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(CSV_HEADER):
            raise DataError(f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            ts = parse_timestamp(row[0].strip())
            demand = int(row[5])
            swim_text = row[6].strip()
            swim = int(swim_text) if swim_text else None
        except (DataError, ValueError) as err:
            raise DataError(f"line {lineno}: {err}") from None
        try:
            derived = derive_calendar(ts)
        except ContractError as err:
            raise DataError(f"line {lineno}: {err}") from None
        for name, text, expect in zip(CSV_HEADER[1:5], row[1:5], derived):
            if text.strip() and int(text) != expect:
                raise DataError(f"line {lineno}: {name}={text.strip()} disagrees with "
                                f"derived value {expect} for {format_timestamp(ts)}")
        if demand < 0:
            raise DataError(f"line {lineno}: negative dep_demand {demand}")
        if swim is not None and swim < 0:
            raise DataError(f"line {lineno}: negative swim_observed_departures {swim}")
        records.append(QuarterHourRecord(ts, *derived, demand, swim))

    records.sort(key=lambda r: r.slice_start_utc)
    for prev, cur in zip(records, records[1:]):
        if prev.slice_start_utc == cur.slice_start_utc:
            raise DataError(f"duplicate timestamp {format_timestamp(cur.slice_start_utc)}")
    return records


def write_records_csv(records, stream):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        swim = "" if r.swim_observed_departures is None else r.swim_observed_departures
        writer.writerow([format_timestamp(r.slice_start_utc), r.hour, r.qtr,
                         r.day_of_week, r.month, r.dep_demand, swim])


def clean_series(records):
    """Gap-fill to a contiguous 15-minute grid; reject negative demand.

    Missing slices are inserted with demand 0 and no swim value (closed or
    zero-traffic periods).
    """
    if not records:
        return []
    out = []
    expected = records[0].slice_start_utc
    for rec in records:
        if rec.slice_start_utc < expected:
            raise ContractError("clean_series requires timestamp-sorted records")
        if rec.dep_demand < 0:
            raise DataError(f"negative demand at {format_timestamp(rec.slice_start_utc)}")
        while expected < rec.slice_start_utc:
            out.append(QuarterHourRecord.at(expected, 0, None))
            expected += STEP
        out.append(rec)
        expected += STEP
    return out


@dataclass
class Scaler:
    """Per-feature z-score statistics fit on the training split only."""

    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    degenerate: dict = field(default_factory=dict)  # feature -> True when variance was zero

    def transform(self, feature, value):
        return (np.asarray(value, dtype=float) - self.mean[feature]) / self.std[feature]

    def inverse(self, feature, value):
        return np.asarray(value, dtype=float) * self.std[feature] + self.mean[feature]

    def to_dict(self):
        return {"mean": dict(self.mean), "std": dict(self.std),
                "degenerate": {k: bool(v) for k, v in self.degenerate.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=dict(d["mean"]), std=dict(d["std"]),
                   degenerate=dict(d.get("degenerate", {})))


def fit_scaler(train_records):
    """Population mean/std of demand (and swim when present) on train rows."""
    if not train_records:
        raise ContractError("fit_scaler: empty training records")
    scaler = Scaler()

    def add_feature(name, values):
        values = np.asarray(values, dtype=float)
        mean = float(values.mean())
        std = float(values.std())  # population
        degenerate = std == 0.0
        scaler.mean[name] = mean
        scaler.std[name] = 1.0 if degenerate else std
        scaler.degenerate[name] = degenerate

    add_feature("y", [r.dep_demand for r in train_records])
    swim = [r.swim_observed_departures for r in train_records
            if r.swim_observed_departures is not None]
    if swim:
        add_feature("swim", swim)
    return scaler


def apply_scaler(scaler, value, feature="y"):
    return scaler.transform(feature, value)


@dataclass
class SupervisedWindow:
    """One training or inference instance.

    ``past_y``/``past_x`` cover the n_lag slices ending at ``origin``;
    ``future_f``/``targets`` cover the n_look_ahead slices after it.
    ``past_x`` has one row per past slice (empty width when no observed
    inputs are configured).  ``future_f`` rows are (hour, qtr, dow, month).
    """

    origin: datetime
    past_y: np.ndarray      # (p,)
    past_x: np.ndarray      # (p, k)
    future_f: np.ndarray    # (tau, 4) ints
    targets: np.ndarray     # (tau,)


def _series_arrays(records):
    demand = np.array([r.dep_demand for r in records], dtype=float)
    swim_vals = [r.swim_observed_departures for r in records]
    has_swim = all(v is not None for v in swim_vals) and bool(records)
    swim = np.array([v if v is not None else 0 for v in swim_vals], dtype=float)
    calendar = np.array([[r.hour, r.qtr - 1, r.day_of_week - 1, r.month - 1] for r in records],
                        dtype=np.intp)
    return demand, swim, has_swim, calendar


def make_windows(records, n_lag, n_look_ahead, with_swim=False):
    """All stride-1 windows; count is len(records) - n_lag - n_look_ahead + 1.

    ``with_swim`` adds the swim channel as a past observed input (requires
    every record to carry a swim value).  Calendar indices in ``future_f``
    are zero-based, ready for embedding lookup.
    """
    if n_lag < 1 or n_look_ahead < 1:
        raise ContractError("make_windows: n_lag and n_look_ahead must be >= 1")
    need = n_lag + n_look_ahead
    if len(records) < need:
        raise ContractError(
            f"make_windows: need at least {need} records (n_lag={n_lag} + "
            f"n_look_ahead={n_look_ahead}), got {len(records)}")
    for prev, cur in zip(records, records[1:]):
        if cur.slice_start_utc - prev.slice_start_utc != STEP:
            raise ContractError(f"records are not gap-free at {format_timestamp(cur.slice_start_utc)}")
    demand, swim, has_swim, calendar = _series_arrays(records)
    if with_swim and not has_swim:
        raise ContractError("make_windows: swim channel requested but some records lack it")

    windows = []
    for j in range(n_lag - 1, len(records) - n_look_ahead):
        lo, hi = j - n_lag + 1, j + 1
        past_x = swim[lo:hi, None] if with_swim else np.empty((n_lag, 0))
        windows.append(SupervisedWindow(
            origin=records[j].slice_start_utc,
            past_y=demand[lo:hi],
            past_x=past_x,
            future_f=calendar[hi:hi + n_look_ahead],
            targets=demand[hi:hi + n_look_ahead],
        ))
    return windows


@dataclass
class SplitSpec:
    """Inclusive train and test date ranges; train must precede test."""

    train_start: date
    train_end: date
    test_start: date
    test_end: date

    def __post_init__(self):
        for name in ("train_start", "train_end", "test_start", "test_end"):
            v = getattr(self, name)
            if isinstance(v, str):
                setattr(self, name, date.fromisoformat(v))
        if self.train_start > self.train_end or self.test_start > self.test_end:
            raise ContractError("split ranges must have start <= end")
        if self.train_end >= self.test_start:
            raise ContractError("train range must end before the test range starts")

    def in_train(self, ts):
        return self.train_start <= ts.date() <= self.train_end

    def in_test(self, ts):
        return self.test_start <= ts.date() <= self.test_end

    def to_dict(self):
        return {"train": [self.train_start.isoformat(), self.train_end.isoformat()],
                "test": [self.test_start.isoformat(), self.test_end.isoformat()]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["train"][0], d["train"][1], d["test"][0], d["test"][1])


def split_train_test(records, spec):
    """Partition records by slice date.  Warns (not errors) on an empty side."""
    train = [r for r in records if spec.in_train(r.slice_start_utc)]
    test = [r for r in records if spec.in_test(r.slice_start_utc)]
    if not train:
        warnings.warn("train partition is empty for the given split")
    if not test:
        warnings.warn("test partition is empty for the given split")
    return train, test


def windows_for_test_range(records, spec, n_lag, n_look_ahead, with_swim=False):
    """Windows over the full series whose forecast origin falls in the test range.

    Past steps may reach back into the trailing train records; targets must
    exist in the series, so origins in the final ``n_look_ahead`` slices are
    dropped.
    """
    windows = make_windows(records, n_lag, n_look_ahead, with_swim=with_swim)
    return [w for w in windows if spec.in_test(w.origin)]
