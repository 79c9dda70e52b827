"""Representative imbalance (reserve activation) profiles from quarter-hourly records.

Pipeline: :func:`ingest_activation_csv` -> :func:`clean_series` ->
:func:`aggregate_hourly` -> :func:`build_representative_profiles`. Upward
and downward streams never mix. Energies are MWh per quarter-hour; an
hourly sum in MWh equals the mean power over that hour in MW, which is
the unit of the final profile.

Hours of the day are indexed 0..23, hour ``h`` covering ``[h:00, h+1:00)``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

DIRECTIONS = ("upward", "downward")
SEASONS = ("winter", "spring", "summer", "autumn")
QUARTER = timedelta(minutes=15)
_MISSING_TOKENS = {"", "n/a", "na", "nan", "null", "none", "-", "n/e"}


class ImbalanceDataError(ValueError):
    """Raised for unusable activation data (bad header, gaps that cannot be anchored, ...)."""


@dataclass(frozen=True)
class ActivationRecord:
    timestamp: datetime
    direction: str
    energy: float  # MWh per quarter-hour, NaN when missing

    @property
    def missing(self) -> bool:
        return math.isnan(self.energy)


@dataclass(frozen=True)
class ColumnSchema:
    """Where the three fields live in the input and how to read them.

    ``direction_values`` maps raw direction labels (case-insensitive) to
    ``"upward"``/``"downward"``. ``units`` is ``"MWh"`` (energy per
    quarter-hour) or ``"MW"`` (average power over the quarter-hour).
    """

    timestamp: str = "timestamp"
    direction: str = "direction"
    value: str = "value"
    delimiter: str = ","
    units: str = "MWh"
    direction_values: Mapping[str, str] = field(default_factory=lambda: {
        "upward": "upward", "up": "upward", "downward": "downward", "down": "downward"})

    def __post_init__(self):
        if self.units not in ("MWh", "MW"):
            raise ImbalanceDataError(f"units must be 'MWh' or 'MW', got {self.units!r}")


def _parse_value(cell: str) -> float:
    cell = cell.strip()
    if cell.lower() in _MISSING_TOKENS:
        return math.nan
    try:
        v = float(cell)
    except ValueError:
        return math.nan
    return v if math.isfinite(v) else math.nan


def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return source.decode("utf-8-sig")
    if isinstance(source, Path):
        return source.read_text(encoding="utf-8-sig")
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("utf-8-sig") if isinstance(data, (bytes, bytearray)) else data
    return str(source)


def ingest_activation_csv(source, schema: ColumnSchema = ColumnSchema()) -> list[ActivationRecord]:
    """Parse delimiter-separated activation data.

    ``source`` may be bytes, text, a file object or a :class:`~pathlib.Path`.
    Cells that do not parse as a number become missing values. Records come
    back grouped by direction (in order of first appearance), each stream in
    timestamp order.
    """
    text = _read_text(source)
    if not text.strip():
        raise ImbalanceDataError("activation data is empty")
    reader = csv.reader(io.StringIO(text), delimiter=schema.delimiter)
    header = [h.strip() for h in next(reader)]
    cols = {}
    for role in ("timestamp", "direction", "value"):
        name = getattr(schema, role)
        if name not in header:
            raise ImbalanceDataError(f"missing column {name!r} (mapped as {role}); header has {header}")
        cols[role] = header.index(name)
    labels = {k.lower(): v for k, v in schema.direction_values.items()}
    scale = 0.25 if schema.units == "MW" else 1.0
    streams: dict[str, list[ActivationRecord]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise ImbalanceDataError(f"line {lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            ts = datetime.fromisoformat(row[cols["timestamp"]].strip())
        except ValueError:
            raise ImbalanceDataError(f"line {lineno}: bad timestamp {row[cols['timestamp']]!r}") from None
        raw_dir = row[cols["direction"]].strip().lower()
        if raw_dir not in labels:
            raise ImbalanceDataError(f"line {lineno}: unknown direction {row[cols['direction']]!r}")
        value = _parse_value(row[cols["value"]])
        if value < 0:
            raise ImbalanceDataError(f"line {lineno}: negative activation {value}")
        streams.setdefault(labels[raw_dir], []).append(ActivationRecord(ts, labels[raw_dir], value * scale))
    if not streams:
        raise ImbalanceDataError("activation data has a header but no rows")
    out = []
    for direction, recs in streams.items():
        recs.sort(key=lambda r: r.timestamp)
        for a, b in zip(recs, recs[1:]):
            if a.timestamp == b.timestamp:
                raise ImbalanceDataError(f"duplicate {direction} timestamp {a.timestamp.isoformat()}")
        out.extend(recs)
    return out


def write_activation_csv(records: Iterable[ActivationRecord], value_format: str = ".4f",
                         missing: str = "N/A") -> str:
    """Inverse of :func:`ingest_activation_csv` for the default schema."""
    buf = io.StringIO()
    buf.write("timestamp,direction,value\n")
    for r in records:
        cell = missing if r.missing else format(r.energy, value_format)
        buf.write(f"{r.timestamp.isoformat(timespec='minutes')},{r.direction},{cell}\n")
    return buf.getvalue()


def split_directions(records: Iterable[ActivationRecord]) -> dict[str, list[ActivationRecord]]:
    out: dict[str, list[ActivationRecord]] = {}
    for r in records:
        out.setdefault(r.direction, []).append(r)
    return out


# --- cleaning -----------------------------------------------------------------

@dataclass(frozen=True)
class CleaningPolicy:
    """Outliers: ``|x - median| > z_threshold * MAD`` within a ``window_days``
    same-hour window. Missing runs up to ``max_gap`` quarter-hours are
    interpolated linearly, longer ones get the same-hour seasonal median."""

    z_threshold: float = 6.0
    max_gap: int = 8
    window_days: int = 7
    max_passes: int = 10

    def __post_init__(self):
        if self.z_threshold <= 0:
            raise ImbalanceDataError("z_threshold must be positive")
        if self.max_gap < 0:
            raise ImbalanceDataError("max_gap must be non-negative")
        if self.window_days < 1 or self.window_days % 2 == 0:
            raise ImbalanceDataError("window_days must be a positive odd number")


@dataclass
class CleaningReport:
    """``values_imputed`` counts entries missing in the input (including
    absent quarter-hours) that were filled; outliers are counted separately
    in ``outliers_removed`` even though they are refilled the same way."""

    outliers_removed: int = 0
    values_imputed: int = 0
    total_records: int = 0
    method_tags: list[str] = field(default_factory=list)

    def merge(self, other: "CleaningReport") -> "CleaningReport":
        tags = list(self.method_tags) + [t for t in other.method_tags if t not in self.method_tags]
        return CleaningReport(self.outliers_removed + other.outliers_removed,
                              self.values_imputed + other.values_imputed,
                              self.total_records + other.total_records, tags)

    def to_dict(self) -> dict:
        return {"outliers_removed": self.outliers_removed, "values_imputed": self.values_imputed,
                "total_records": self.total_records, "method_tags": list(self.method_tags)}


def _grid(stream: Sequence[ActivationRecord]) -> tuple[datetime, np.ndarray]:
    """Regular quarter-hour grid from the first to the last record; absent slots are NaN."""
    first, last = stream[0].timestamp, stream[-1].timestamp
    n = int((last - first) / QUARTER) + 1
    values = np.full(n, np.nan)
    for r in stream:
        offset = r.timestamp - first
        if offset % QUARTER:
            raise ImbalanceDataError(f"timestamp {r.timestamp.isoformat()} is off the 15-minute grid")
        values[int(offset / QUARTER)] = r.energy
    return first, values


def _day_layout(first: datetime, n: int) -> tuple[int, int]:
    """(leading pad, number of days) to lay the series out as whole days of 96 quarter-hours."""
    midnight = datetime.combine(first.date(), datetime.min.time())
    lead = int((first - midnight) / QUARTER)
    return lead, -(-(lead + n) // 96)


def _outlier_mask(values: np.ndarray, first: datetime, policy: CleaningPolicy) -> np.ndarray:
    n = values.size
    lead, days = _day_layout(first, n)
    half = policy.window_days // 2
    padded = np.full((days + 2 * half) * 96, np.nan)
    padded[half * 96 + lead: half * 96 + lead + n] = values
    by_hour = padded.reshape(days + 2 * half, 24, 4)
    # (days, 24, 4, window) -> pool the four quarters of the hour over the window
    win = sliding_window_view(by_hour, policy.window_days, axis=0)
    pool = win.reshape(days, 24, 4 * policy.window_days)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        # all-NaN windows at the series edges are expected
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(pool, axis=-1)
        mad = np.nanmedian(np.abs(pool - med[..., None]), axis=-1)
    med_q = np.repeat(med, 4, axis=1).reshape(-1)[lead:lead + n]
    mad_q = np.repeat(mad, 4, axis=1).reshape(-1)[lead:lead + n]
    dev = np.abs(values - med_q)
    # relative slack keeps exact repeats of the median from tripping a zero MAD
    slack = 1e-9 * np.maximum(1.0, np.abs(med_q))
    with np.errstate(invalid="ignore"):
        return np.isfinite(values) & np.isfinite(med_q) & (dev > policy.z_threshold * mad_q + slack)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open ``(start, stop)`` index ranges where ``mask`` is True."""
    if not mask.any():
        return []
    d = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def _fill(values: np.ndarray, first: datetime, policy: CleaningPolicy,
          season_of: Callable[[date], str]) -> tuple[np.ndarray, set[str]]:
    out = values.copy()
    missing = np.isnan(out)
    used = set()
    stamps = [first + k * QUARTER for k in range(out.size)]
    medians = None
    for a, b in _runs(missing):
        if b - a <= policy.max_gap and a > 0 and b < out.size:
            left, right = out[a - 1], out[b]
            steps = np.arange(1, b - a + 1) / (b - a + 1)
            out[a:b] = left + (right - left) * steps
            used.add("linear")
            continue
        if medians is None:
            medians = _seasonal_medians(values, stamps, season_of)
        for k in range(a, b):
            key = (season_of(stamps[k].date()), stamps[k].hour)
            out[k] = medians.get(key, medians["all"])
        used.add("seasonal_median")
    return out, used


def _seasonal_medians(values: np.ndarray, stamps: list[datetime], season_of) -> dict:
    groups: dict = defaultdict(list)
    for v, ts in zip(values, stamps):
        if not math.isnan(v):
            groups[(season_of(ts.date()), ts.hour)].append(v)
    out = {k: float(np.median(v)) for k, v in groups.items()}
    present = values[~np.isnan(values)]
    out["all"] = float(np.median(present))
    return out


def meteorological_season(day: date) -> str:
    return {12: "winter", 1: "winter", 2: "winter", 3: "spring", 4: "spring", 5: "spring",
            6: "summer", 7: "summer", 8: "summer"}.get(day.month, "autumn")


def season_function(season_map) -> Callable[[date], str]:
    if season_map is None:
        return meteorological_season
    if callable(season_map):
        return season_map
    mapping = dict(season_map)
    if all(isinstance(k, int) for k in mapping):  # month -> season
        return lambda d: mapping[d.month]
    return lambda d: mapping[d]


def clean_series(records: Sequence[ActivationRecord], policy: CleaningPolicy = CleaningPolicy(),
                 season_map=None) -> tuple[list[ActivationRecord], CleaningReport]:
    """Flag outliers, fill missing values and absent quarter-hours.

    Detection and refilling repeat until refilling the flagged points no
    longer changes any value. Only points whose value actually changed are
    counted as outliers, so cleaning an already cleaned series is a no-op.
    """
    season_of = season_function(season_map)
    if not records:
        return [], CleaningReport()
    out: list[ActivationRecord] = []
    report = CleaningReport()
    for direction, stream in split_directions(records).items():
        first, values = _grid(stream)
        if np.isnan(values).all():
            raise ImbalanceDataError(f"{direction} series has no values to anchor imputation")
        report.total_records += values.size
        originally_missing = np.isnan(values)
        tags: list[str] = []
        filled, used = _fill(values.copy(), first, policy, season_of)
        replaced = np.zeros(values.size, dtype=bool)
        for _ in range(policy.max_passes):
            flags = _outlier_mask(filled, first, policy)
            if not flags.any():
                break
            work = filled.copy()
            work[flags] = np.nan
            refilled, more = _fill(work, first, policy, season_of)
            changed = flags & (refilled != filled)
            if not changed.any():
                break
            replaced |= changed
            used |= more
            filled = refilled
        else:
            logger.warning("%s outlier screening did not settle after %d passes", direction, policy.max_passes)
        n_out = int((replaced & ~originally_missing).sum())
        if n_out:
            tags.append(f"rolling_mad(z={policy.z_threshold:g},window={policy.window_days}d)")
        if "linear" in used:
            tags.append(f"linear_interpolation(max_gap={policy.max_gap})")
        if "seasonal_median" in used:
            tags.append("seasonal_same_hour_median")
        report = report.merge(CleaningReport(n_out, int(originally_missing.sum()), 0, tags))
        out.extend(ActivationRecord(first + k * QUARTER, direction, float(v)) for k, v in enumerate(filled))
    return out, report


# --- hourly aggregation -------------------------------------------------------

@dataclass(frozen=True)
class HourlySeries:
    """Hourly activated energy (MWh, equal to mean MW) of one direction."""

    direction: str
    hours: tuple[datetime, ...]
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.hours)


def aggregate_hourly(records: Iterable[ActivationRecord]) -> dict[str, HourlySeries]:
    """Sum the four quarter-hours of every hour, per direction."""
    buckets: dict[str, dict[datetime, list[ActivationRecord]]] = {}
    for r in records:
        if r.missing:
            raise ImbalanceDataError(f"missing {r.direction} value at {r.timestamp.isoformat()}; clean first")
        hour = r.timestamp.replace(minute=0, second=0, microsecond=0)
        buckets.setdefault(r.direction, {}).setdefault(hour, []).append(r)
    out = {}
    for direction, by_hour in buckets.items():
        hours = sorted(by_hour)
        vals = []
        for h in hours:
            recs = by_hour[h]
            minutes = sorted(r.timestamp.minute for r in recs)
            if minutes != [0, 15, 30, 45]:
                raise ImbalanceDataError(f"incomplete {direction} hour {h.isoformat(timespec='minutes')}: "
                                         f"quarter-hours at minutes {minutes}")
            total = 0.0
            for r in sorted(recs, key=lambda r: r.timestamp):
                total += r.energy
            vals.append(total)
        out[direction] = HourlySeries(direction, tuple(hours), np.array(vals))
    return out


# --- representative profiles --------------------------------------------------

@dataclass
class RepresentativeProfile:
    """Mean activation power in MW indexed ``[season, hour, direction]``."""

    seasons: tuple[str, ...]
    directions: tuple[str, ...]
    values: np.ndarray
    source_years: tuple[int, ...] = ()

    def __post_init__(self):
        self.seasons = tuple(self.seasons)
        self.directions = tuple(self.directions)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.seasons), 24, len(self.directions)):
            raise ImbalanceDataError(f"profile values have shape {self.values.shape}")
        if np.any(self.values < 0):
            raise ImbalanceDataError("profile values must be non-negative")

    def value(self, season: str, hour: int, direction: str) -> float:
        return float(self.values[self.seasons.index(season), hour, self.directions.index(direction)])

    def direction(self, direction: str) -> np.ndarray:
        """``(season, hour)`` array of one direction."""
        if direction not in self.directions:
            raise ImbalanceDataError(f"profile has no {direction} direction")
        return self.values[:, :, self.directions.index(direction)]

    def on_seasons(self, seasons: Sequence[str]) -> "RepresentativeProfile":
        """Re-express on another season set; ``"a_b"`` is the mean of seasons ``a`` and ``b``."""
        rows = []
        for s in seasons:
            if s in self.seasons:
                rows.append(self.values[self.seasons.index(s)])
                continue
            parts = s.split("_")
            if len(parts) > 1 and all(p in self.seasons for p in parts):
                rows.append(np.mean([self.values[self.seasons.index(p)] for p in parts], axis=0))
                continue
            raise ImbalanceDataError(f"season {s!r} cannot be matched to profile seasons {self.seasons}")
        return RepresentativeProfile(tuple(seasons), self.directions, np.stack(rows), self.source_years)

    def to_rows(self) -> list[tuple[str, int, str, float]]:
        return [(s, h, d, float(self.values[i, h, k]))
                for i, s in enumerate(self.seasons) for h in range(24) for k, d in enumerate(self.directions)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("season,hour,direction,value_mw\n")
        for s, h, d, v in self.to_rows():
            buf.write(f"{s},{h},{d},{v!r}\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"seasons": list(self.seasons), "directions": list(self.directions),
                "source_years": list(self.source_years), "unit": "MW",
                "values": {d: {s: [float(v) for v in self.values[i, :, k]] for i, s in enumerate(self.seasons)}
                           for k, d in enumerate(self.directions)}}

    @classmethod
    def from_dict(cls, data: Mapping) -> "RepresentativeProfile":
        seasons, directions = tuple(data["seasons"]), tuple(data["directions"])
        vals = np.array([[data["values"][d][s] for d in directions] for s in seasons]).transpose(0, 2, 1)
        return cls(seasons, directions, vals, tuple(data.get("source_years", ())))

    @classmethod
    def from_csv(cls, text: str) -> "RepresentativeProfile":
        lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        rows = list(csv.DictReader(lines))
        if not rows or not {"season", "hour", "direction", "value_mw"} <= set(rows[0]):
            raise ImbalanceDataError("profile CSV needs columns season,hour,direction,value_mw")
        seasons = tuple(dict.fromkeys(r["season"] for r in rows))
        directions = tuple(dict.fromkeys(r["direction"] for r in rows))
        vals = np.full((len(seasons), 24, len(directions)), np.nan)
        for r in rows:
            vals[seasons.index(r["season"]), int(r["hour"]), directions.index(r["direction"])] = float(r["value_mw"])
        if np.isnan(vals).any():
            raise ImbalanceDataError("profile CSV does not cover every season, hour and direction")
        return cls(seasons, directions, vals)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_representative_profiles(hourly: Mapping[str, HourlySeries], season_map=None,
                                  years: Iterable[int] | None = None,
                                  seasons: Sequence[str] = SEASONS) -> RepresentativeProfile:
    """Mean of each hour-of-day value over all days of each season and all selected years."""
    season_of = season_function(season_map)
    if not hourly:
        raise ImbalanceDataError("no hourly data")
    years_sel = None if years is None else set(int(y) for y in years)
    directions = tuple(d for d in DIRECTIONS if d in hourly) + tuple(d for d in hourly if d not in DIRECTIONS)
    sums = np.zeros((len(seasons), 24, len(directions)))
    counts = np.zeros((len(seasons), 24, len(directions)), dtype=int)
    seen_years: set[int] = set()
    for k, d in enumerate(directions):
        series = hourly[d]
        for ts, v in zip(series.hours, series.values):
            if years_sel is not None and ts.year not in years_sel:
                continue
            s = season_of(ts.date())
            if s not in seasons:
                continue
            i = seasons.index(s)
            sums[i, ts.hour, k] += v
            counts[i, ts.hour, k] += 1
            seen_years.add(ts.year)
    for i, s in enumerate(seasons):
        if not counts[i].any():
            raise ImbalanceDataError(f"season {s!r} has no days in the data")
    if (counts == 0).any():
        i, h, k = np.argwhere(counts == 0)[0]
        raise ImbalanceDataError(f"no {directions[k]} data for hour {h} in season {seasons[i]!r}")
    return RepresentativeProfile(tuple(seasons), directions, sums / counts, tuple(sorted(seen_years)))


def profiles_from_csv(source, schema: ColumnSchema = ColumnSchema(), policy: CleaningPolicy = CleaningPolicy(),
                      season_map=None, years=None) -> tuple[RepresentativeProfile, CleaningReport]:
    records = ingest_activation_csv(source, schema)
    cleaned, report = clean_series(records, policy, season_map)
    return build_representative_profiles(aggregate_hourly(cleaned), season_map, years), report


__all__ = [
    "ActivationRecord", "CleaningPolicy", "CleaningReport", "ColumnSchema", "HourlySeries",
    "ImbalanceDataError", "RepresentativeProfile", "aggregate_hourly", "build_representative_profiles",
    "clean_series", "ingest_activation_csv", "meteorological_season", "profiles_from_csv",
    "season_function", "split_directions", "write_activation_csv",
]
