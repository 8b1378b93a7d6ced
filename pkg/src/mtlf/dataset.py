"""Monthly demand series: loading, validation, splitting and synthesis.

All series are strictly positive, gap-free monthly sequences anchored to a
calendar month.  Collections are read-only after construction so they can be
shared freely across concurrently running trainers.
"""

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MonthlySeries",
    "SeriesCollection",
    "SplitSpec",
    "SplitResult",
    "DataError",
    "load_csv",
    "save_csv",
    "split",
    "synthesize",
    "month_index",
    "index_to_month",
    "add_months",
]

# Minimum history for the modelling pipeline: 24 months to form one training
# sample plus the 12-month horizon.
MIN_MODEL_MONTHS = 36


class DataError(ValueError):
    pass


def month_index(year, month):
    """Serial month number; consecutive months differ by exactly 1."""
    if not 1 <= month <= 12:
        raise DataError(f"month out of range: {month}")
    return year * 12 + (month - 1)


def index_to_month(idx):
    return idx // 12, idx % 12 + 1


def add_months(year, month, k):
    return index_to_month(month_index(year, month) + k)


@dataclass(frozen=True)
class MonthlySeries:
    """One demand history: identifier, first calendar month, monthly values."""

    id: str
    start: tuple  # (year, month)
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        year, month = self.start
        month_index(year, month)  # validates month range
        if values.ndim != 1 or len(values) == 0:
            raise DataError(f"series {self.id}: values must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise DataError(f"series {self.id}: non-positive demand")

    def __len__(self):
        return len(self.values)

    @property
    def end(self):
        """Calendar month of the last observation."""
        return add_months(*self.start, len(self.values) - 1)

    def month_of(self, i):
        """Calendar month of observation ``i``."""
        return add_months(*self.start, i)

    def drop_last(self, k):
        if k == 0:
            return self
        return MonthlySeries(self.id, self.start, self.values[:-k])


@dataclass(frozen=True)
class SeriesCollection:
    series: tuple

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        if not self.series:
            raise DataError("empty collection")
        ids = [s.id for s in self.series]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate series ids")
        ends = {s.end for s in self.series}
        if len(ends) != 1:
            raise DataError(f"series end at different months: {sorted(ends)}")

    def __len__(self):
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    @property
    def ids(self):
        return [s.id for s in self.series]

    @property
    def common_end(self):
        return self.series[0].end

    def get(self, series_id):
        for s in self.series:
            if s.id == series_id:
                return s
        raise KeyError(series_id)

    def subset(self, ids):
        keep = set(ids)
        return SeriesCollection(tuple(s for s in self.series if s.id in keep))

    def drop_last(self, k):
        return SeriesCollection(tuple(s.drop_last(k) for s in self.series))


CSV_HEADER = ["id", "year", "month", "value"]


def load_csv(path):
    """Read ``id,year,month,value`` rows into a collection.

    Rows must be grouped per id and sorted by (year, month) with no calendar
    gaps or duplicates; values must be strictly positive.  All series must
    end at the same month.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise DataError(f"expected header {','.join(CSV_HEADER)!r}, got {header!r}")
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"line {lineno}: expected 4 fields")
            sid, year, month, value = row
            try:
                year, month, value = int(year), int(month), float(value)
            except ValueError:
                raise DataError(f"line {lineno}: malformed row {row!r}") from None
            if value <= 0:
                raise DataError(f"line {lineno}: non-positive demand for {sid}")
            idx = month_index(year, month)
            entries = rows.setdefault(sid, [])
            if entries:
                prev = entries[-1][0]
                if idx == prev:
                    raise DataError(f"line {lineno}: duplicate month for {sid}: {year}-{month:02d}")
                if idx < prev:
                    raise DataError(f"line {lineno}: rows for {sid} not sorted by (year, month)")
                if idx > prev + 1:
                    raise DataError(f"line {lineno}: calendar gap in {sid} before {year}-{month:02d}")
            entries.append((idx, value))
    if not rows:
        raise DataError("no data rows")
    series = []
    for sid, entries in rows.items():
        start = index_to_month(entries[0][0])
        series.append(MonthlySeries(sid, start, np.array([v for _, v in entries])))
    return SeriesCollection(tuple(series))


def save_csv(collection, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for s in collection:
            for i, v in enumerate(s.values):
                year, month = s.month_of(i)
                writer.writerow([s.id, year, month, repr(float(v))])


@dataclass(frozen=True)
class SplitSpec:
    test_months: int = 12
    valid_months: int = 12

    def __post_init__(self):
        if self.test_months < 1 or self.valid_months < 1:
            raise DataError("split windows must be at least 1 month")


@dataclass(frozen=True)
class SplitResult:
    train: SeriesCollection
    valid_targets: dict  # id -> array of valid_months actuals
    test_targets: dict  # id -> array of test_months actuals
    spec: SplitSpec

    @property
    def train_valid(self):
        """Training data extended through the validation window (used for the
        final fit that is scored on the test window)."""
        collection = self.train
        out = []
        for s in collection:
            joined = np.concatenate([s.values, self.valid_targets[s.id]])
            out.append(MonthlySeries(s.id, s.start, joined))
        return SeriesCollection(tuple(out))


def split(collection, spec=SplitSpec()):
    """Hold out the last ``test_months`` for testing and the preceding
    ``valid_months`` for validation; the rest is training history."""
    tm, vm = spec.test_months, spec.valid_months
    for s in collection:
        if len(s) < tm + vm + 24:
            raise DataError(
                f"series {s.id} too short to split: {len(s)} < {tm + vm + 24} months"
            )
    train = []
    valid_targets = {}
    test_targets = {}
    for s in collection:
        test_targets[s.id] = s.values[-tm:]
        valid_targets[s.id] = s.values[-(tm + vm):-tm]
        train.append(MonthlySeries(s.id, s.start, s.values[: -(tm + vm)]))
    return SplitResult(SeriesCollection(tuple(train)), valid_targets, test_targets, spec)


def synthesize(n_series, n_years, seed, noise=0.02):
    """Generate a deterministic collection of positive monthly series.

    Each series is trend * season * noise: a smooth nonlinear trend (gentle
    exponential drift plus a long low-amplitude wave -- mild enough that a
    well-fit seasonal model forecasts a noiseless series to well under 0.5%
    MAPE), a positive multiplicative monthly profile with geometric mean one,
    and lognormal noise with the given dispersion.  ``noise=0`` gives exactly
    trend * season.  All series end in December 2014.
    """
    if n_years < 3:
        raise DataError("need at least 3 years to form a training sample and horizon")
    if n_series < 1:
        raise DataError("need at least one series")
    if noise < 0:
        raise DataError("noise dispersion must be nonnegative")
    rng = np.random.default_rng(seed)
    n_months = n_years * 12
    start = (2015 - n_years, 1)
    t = np.arange(n_months)
    series = []
    width = max(2, len(str(n_series)))
    for i in range(n_series):
        base = rng.uniform(1000.0, 10000.0)
        growth = rng.uniform(-0.005, 0.005)  # per year
        wave_amp = rng.uniform(0.0, 0.005)
        wave_period = rng.uniform(84.0, 120.0)
        wave_phase = rng.uniform(0.0, 2 * np.pi)
        trend = base * np.exp(np.log1p(growth) * t / 12.0)
        trend *= 1.0 + wave_amp * np.sin(2 * np.pi * t / wave_period + wave_phase)

        amp1 = rng.uniform(0.05, 0.25)
        amp2 = rng.uniform(0.0, 0.08)
        peak1 = rng.uniform(0.0, 12.0)
        peak2 = rng.uniform(0.0, 12.0)
        months = np.arange(12)
        log_season = amp1 * np.cos(2 * np.pi * (months - peak1) / 12.0)
        log_season += amp2 * np.cos(4 * np.pi * (months - peak2) / 12.0)
        log_season -= log_season.mean()  # geometric mean exactly 1
        season = np.exp(log_season)

        eps = np.exp(noise * rng.standard_normal(n_months))
        values = trend * season[t % 12] * eps
        series.append(MonthlySeries(f"S{i + 1:0{width}d}", start, values))
    return SeriesCollection(tuple(series))
