"""Electrical features from raw voltage/current windows.

Per window: active power, reactive power (power-triangle magnitude) and the RMS
of the current spectrum inside fixed frequency bands.  Feature vectors are then
stacked into pattern windows for the topic model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .align import format_ns, format_value, parse_ns
from .core import PatternWindow


@dataclass
class RawWindow:
    voltage: np.ndarray
    current: np.ndarray
    rate: float
    start_time: float = 0.0

    def __post_init__(self):
        self.voltage = np.asarray(self.voltage, dtype=float).reshape(-1)
        self.current = np.asarray(self.current, dtype=float).reshape(-1)
        if self.voltage.shape != self.current.shape:
            raise ValueError(f"voltage has {self.voltage.size} samples, current has {self.current.size}")
        if self.voltage.size < 2:
            raise ValueError("a raw window needs at least 2 samples")
        if not self.rate > 0:
            raise ValueError(f"sample rate must be positive, got {self.rate}")


@dataclass(frozen=True)
class BandSpec:
    edges: tuple[float, ...]

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if len(edges) < 2:
            raise ValueError("a band spec needs at least two edges")
        if edges[0] < 0:
            raise ValueError(f"first band edge must be >= 0, got {edges[0]}")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"band edges must be strictly ascending: {edges}")

    @property
    def count(self) -> int:
        return len(self.edges) - 1

    def check(self, rate: float) -> None:
        if self.edges[-1] > rate / 2.0 * (1 + 1e-12):
            raise ValueError(f"band edge {self.edges[-1]} Hz is beyond Nyquist ({rate / 2.0} Hz)")

    @classmethod
    def default(cls, rate: float, count: int = 8) -> "BandSpec":
        """``count`` octave-spaced bands, the lowest one starting at DC."""
        nyq = rate / 2.0
        inner = [nyq * 2.0 ** -(count - j) for j in range(1, count)]
        return cls((0.0, *inner, nyq))


@dataclass
class FeatureVector:
    timestamp: float
    active_power: float
    reactive_power: float
    band_rms: np.ndarray
    exogenous: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def as_row(self) -> np.ndarray:
        return np.concatenate([[self.active_power, self.reactive_power],
                               np.asarray(self.band_rms, dtype=float),
                               np.asarray(self.exogenous, dtype=float)])


def active_power(w: RawWindow) -> float:
    return float(np.mean(w.voltage * w.current))


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def reactive_power(w: RawWindow) -> float:
    """Magnitude ``sqrt(S^2 - P^2)`` with ``S = V_rms * I_rms``, clamped at zero."""
    p = active_power(w)
    s = _rms(w.voltage) * _rms(w.current)
    return math.sqrt(max(0.0, s * s - p * p))


def rms_band_spectrum(w: RawWindow, bands: BandSpec) -> np.ndarray:
    """RMS of the current waveform restricted to each frequency band.

    One-sided power per FFT bin is normalised so the bins sum to the mean square of
    the samples.  A bin at frequency f belongs to band j when
    ``edges[j] <= f < edges[j+1]``; the top edge of the last band is inclusive.
    """
    bands.check(w.rate)
    x = w.current
    N = x.size
    spec = np.fft.rfft(x)
    power = np.abs(spec) ** 2 / N ** 2
    power[1:] *= 2.0
    if N % 2 == 0:
        power[-1] /= 2.0  # Nyquist bin has no mirror
    freqs = np.fft.rfftfreq(N, d=1.0 / w.rate)
    edges = np.asarray(bands.edges)
    # snap bin frequencies that differ from an edge only by rounding onto it
    near = np.abs(freqs[:, None] - edges[None, :]) <= 1e-9 * np.maximum(edges[None, :], 1.0)
    hit = near.any(axis=1)
    freqs[hit] = edges[near[hit].argmax(axis=1)]
    idx = np.searchsorted(edges, freqs, side="right") - 1
    idx[freqs == edges[-1]] = bands.count - 1
    inside = (idx >= 0) & (idx < bands.count)
    totals = np.bincount(idx[inside], weights=power[inside], minlength=bands.count)
    return np.sqrt(totals)


def features_of(w: RawWindow, bands: BandSpec) -> FeatureVector:
    return FeatureVector(w.start_time, active_power(w), reactive_power(w), rms_band_spectrum(w, bands))


def samples_per_window(rate: float, window_seconds: float) -> int:
    if not window_seconds > 0:
        raise ValueError(f"window length must be positive, got {window_seconds}")
    count = rate * window_seconds
    n = int(round(count))
    if n < 2 or abs(count - n) > 1e-9 * count:
        raise ValueError(f"window of {window_seconds} s at {rate} Hz is not a whole number (>= 2) of samples")
    return n


def make_feature_stream(samples: Iterable[tuple[float, float, float]], rate: float,
                        window_seconds: float, bands: BandSpec) -> Iterator[FeatureVector]:
    """Cut a ``(timestamp, voltage, current)`` sample stream into fixed windows.

    Emits one feature vector per complete window, stamped with the window's first
    sample time; a trailing partial window is dropped.
    """
    size = samples_per_window(rate, window_seconds)
    bands.check(rate)
    buf_t, buf_v, buf_i = [], [], []
    for t, v, i in samples:
        buf_t.append(t)
        buf_v.append(v)
        buf_i.append(i)
        if len(buf_v) == size:
            yield features_of(RawWindow(buf_v, buf_i, rate, buf_t[0]), bands)
            buf_t, buf_v, buf_i = [], [], []


def feature_names(bands: BandSpec) -> list[str]:
    return ["real_power", "reactive_power", *(f"rms_{j}" for j in range(bands.count))]


def assemble_pattern_windows(features: Iterable[FeatureVector | np.ndarray], n: int,
                             feature_seconds: float = 1.0, times: Sequence[float] | None = None
                             ) -> Iterator[PatternWindow]:
    """Stack consecutive feature vectors into pattern windows of exactly ``n`` rows.

    Accepts :class:`FeatureVector` objects or plain rows; for plain rows the start
    times come from ``times`` (default: row index times ``feature_seconds``).
    """
    if n < 1:
        raise ValueError(f"pattern window length must be >= 1, got {n}")
    rows, starts = [], []
    width = None
    for idx, fv in enumerate(features):
        if isinstance(fv, FeatureVector):
            row, t = fv.as_row(), fv.timestamp
        else:
            row = np.asarray(fv, dtype=float).reshape(-1)
            t = times[idx] if times is not None else idx * feature_seconds
        if width is None:
            width = row.size
        elif row.size != width:
            raise ValueError(f"feature vector {idx} has {row.size} columns, expected {width}")
        rows.append(row)
        starts.append(t)
        if len(rows) == n:
            yield PatternWindow(np.vstack(rows), start_time=float(starts[0]), span=n * feature_seconds)
            rows, starts = [], []


def iter_raw_csv(path) -> Iterator[tuple[int, float, float]]:
    """Yield ``(timestamp_ns, voltage, current)`` rows from a raw signal CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["timestamp", "voltage", "current"]:
            raise ValueError(f"{path}: line 1: expected header timestamp,voltage,current, got {header}")
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}: line {reader.line_num}: expected 3 fields, got {len(row)}")
            try:
                yield parse_ns(row[0]), float(row[1]), float(row[2])
            except (ValueError, ArithmeticError):
                raise ValueError(f"{path}: line {reader.line_num}: malformed number") from None


def write_raw_csv(path, t_ns: np.ndarray, v: np.ndarray, i: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("timestamp,voltage,current\n")
        for a, b, c in zip(t_ns, v, i):
            fh.write(f"{format_ns(a)},{format_value(b)},{format_value(c)}\n")
