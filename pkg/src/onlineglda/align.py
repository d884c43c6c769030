"""Timestamp synchronisation and forward-fill alignment of multi-rate streams.

Timestamps are held as int64 nanoseconds so month-long spans do not drift; CSV
files carry them as decimal seconds with nine fractional digits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Sequence

import numpy as np

NS_PER_S = 1_000_000_000


class CsvFormatError(ValueError):
    """A CSV file violates the expected layout; the message names the line."""


def seconds_to_ns(seconds) -> np.ndarray:
    return np.rint(np.asarray(seconds, dtype=float) * NS_PER_S).astype(np.int64)


def ns_to_seconds(ns) -> np.ndarray:
    return np.asarray(ns, dtype=np.int64) / NS_PER_S


def format_ns(ns: int) -> str:
    ns = int(ns)
    sign = "-" if ns < 0 else ""
    q, r = divmod(abs(ns), NS_PER_S)
    return f"{sign}{q}.{r:09d}"


def parse_ns(text: str) -> int:
    d = Decimal(text.strip())
    if not d.is_finite():
        raise InvalidOperation(text)
    return int((d * NS_PER_S).to_integral_value())


def format_value(x: float) -> str:
    # repr is the shortest string that round-trips the double exactly
    return repr(float(x))


@dataclass
class TimedSeries:
    name: str
    timestamps: np.ndarray          # int64 ns, strictly increasing
    values: np.ndarray              # (N, k)
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1)
        if vals.shape[0] != self.timestamps.shape[0]:
            raise ValueError(f"{self.name}: {self.timestamps.shape[0]} timestamps but "
                             f"{vals.shape[0]} value rows")
        self.values = vals
        if not self.columns:
            k = vals.shape[1]
            self.columns = (self.name,) if k == 1 else tuple(f"{self.name}_{j}" for j in range(k))
        self.columns = tuple(self.columns)
        if len(self.columns) != vals.shape[1]:
            raise ValueError(f"{self.name}: {len(self.columns)} column names for {vals.shape[1]} values")
        bad = np.nonzero(np.diff(self.timestamps) <= 0)[0]
        if bad.size:
            raise ValueError(f"{self.name}: timestamps not strictly increasing at sample {bad[0] + 1}")

    def __len__(self) -> int:
        return self.timestamps.shape[0]

    @classmethod
    def from_seconds(cls, name, seconds, values, columns=()) -> "TimedSeries":
        return cls(name, seconds_to_ns(seconds), values, columns)


@dataclass
class AlignedFrame:
    timestamps: np.ndarray
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        n = self.timestamps.shape[0]
        for name, col in self.columns.items():
            col = np.asarray(col, dtype=float).reshape(-1)
            if col.shape[0] != n:
                raise ValueError(f"column {name!r} has {col.shape[0]} rows, expected {n}")
            self.columns[name] = col
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("frame timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.timestamps.shape[0]

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.names if names is None else list(names)
        if not names:
            return np.zeros((len(self), 0))
        return np.column_stack([self.columns[c] for c in names])

    def equals(self, other: "AlignedFrame") -> bool:
        return (np.array_equal(self.timestamps, other.timestamps)
                and self.names == other.names
                and all(np.array_equal(self.columns[c], other.columns[c]) for c in self.names))


def synchronize(series: TimedSeries, total_shift: float) -> TimedSeries:
    """Spread a clock offset linearly over the samples.

    Sample ``i`` (zero-based) of ``N`` moves by ``i * total_shift / N`` seconds, so the
    first sample is untouched and the last moves by ``(N-1)/N`` of the shift.
    """
    N = len(series)
    if N == 0:
        raise ValueError(f"{series.name}: cannot synchronise an empty series")
    shift_ns = total_shift * NS_PER_S
    offsets = np.rint(np.arange(N) * (shift_ns / N)).astype(np.int64)
    ts = series.timestamps + offsets
    bad = np.nonzero(np.diff(ts) <= 0)[0]
    if bad.size:
        raise ValueError(f"{series.name}: shift of {total_shift} s breaks timestamp order "
                         f"at sample {bad[0] + 1}")
    return TimedSeries(series.name, ts, series.values.copy(), series.columns)


def align(streams: Sequence[TimedSeries], reference: str | None = None) -> AlignedFrame:
    """Merge streams onto the union of their timestamps, carrying values forward.

    Rows start at the latest first-timestamp among the streams, so every cell has a
    measured predecessor.  With ``reference`` set, only that stream's timestamps are
    kept as rows.
    """
    if not streams:
        raise ValueError("align needs at least one stream")
    for s in streams:
        if len(s) == 0:
            raise ValueError(f"stream {s.name!r} is empty")
    names = [c for s in streams for c in s.columns]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate column names across streams: {names}")
    start = max(int(s.timestamps[0]) for s in streams)
    if reference is None:
        grid = np.unique(np.concatenate([s.timestamps for s in streams]))
    else:
        by_name = {s.name: s for s in streams}
        if reference not in by_name:
            raise ValueError(f"reference stream {reference!r} not among {list(by_name)}")
        grid = by_name[reference].timestamps
    grid = grid[grid >= start]
    columns = {}
    for s in streams:
        idx = np.searchsorted(s.timestamps, grid, side="right") - 1
        for j, c in enumerate(s.columns):
            columns[c] = s.values[idx, j]
    return AlignedFrame(grid, columns)


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: line 1: missing header") from None
        header = [h.strip() for h in header]
        yield header
        for row in reader:
            yield reader.line_num, row


def _parse_table(path, expected: Sequence[str] | None):
    rows = _read_rows(path)
    header = next(rows)
    if not header or header[0] != "timestamp":
        raise CsvFormatError(f"{path}: line 1: first column must be 'timestamp', got {header[:1]}")
    cols = header[1:]
    if not cols or any(not c for c in cols):
        raise CsvFormatError(f"{path}: line 1: need at least one named value column")
    if len(set(cols)) != len(cols):
        raise CsvFormatError(f"{path}: line 1: duplicate column names")
    if expected is not None and list(expected) != cols:
        raise CsvFormatError(f"{path}: line 1: expected columns {list(expected)}, got {cols}")
    ts, vals = [], []
    prev = None
    for line, row in rows:
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise CsvFormatError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
        try:
            t = parse_ns(row[0])
            v = [float(x) for x in row[1:]]
        except (InvalidOperation, ValueError):
            raise CsvFormatError(f"{path}: line {line}: malformed number in {row}") from None
        if not all(math.isfinite(x) for x in v):
            raise CsvFormatError(f"{path}: line {line}: non-finite value")
        if prev is not None and t <= prev:
            raise CsvFormatError(f"{path}: line {line}: timestamp {row[0]} not after previous")
        prev = t
        ts.append(t)
        vals.append(v)
    values = np.array(vals, dtype=float).reshape(len(vals), len(cols))
    return cols, np.array(ts, dtype=np.int64), values


def read_series_csv(path, name: str | None = None, columns: Sequence[str] | None = None) -> TimedSeries:
    """Read ``timestamp,value`` or ``timestamp,v1..vk`` into a series.

    ``columns`` pins the expected value header.  Malformed rows and non-increasing
    timestamps raise :class:`CsvFormatError` naming the line.
    """
    cols, ts, values = _parse_table(path, columns)
    name = name or Path(path).stem
    if cols == ["value"]:
        cols = [name]
    return TimedSeries(name, ts, values, tuple(cols))


def read_frame_csv(path) -> AlignedFrame:
    cols, ts, values = _parse_table(path, None)
    return AlignedFrame(ts, {c: values[:, j] for j, c in enumerate(cols)})


def write_frame_csv(frame: AlignedFrame, path) -> None:
    names = frame.names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *names])
        cols = [frame.columns[c] for c in names]
        for i, t in enumerate(frame.timestamps):
            w.writerow([format_ns(t), *(format_value(c[i]) for c in cols)])


def write_series_csv(series: TimedSeries, path) -> None:
    cols = list(series.columns)
    write_frame_csv(AlignedFrame(series.timestamps,
                                 {c: series.values[:, j] for j, c in enumerate(cols)}), path)
