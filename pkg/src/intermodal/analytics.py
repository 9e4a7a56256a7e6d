"""Descriptive statistics over the stored mobility data.

Covers the user-facing numbers (mode share per user), dataset-level counters,
per-stop query time series, road congestion levels derived from floating-car
speeds, and the combined view of how a large event bends both road traffic
and public transport demand at once.
"""

from __future__ import annotations

import enum
import math
import statistics
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone

from .config import PipelineConfig
from .geo import GeoPoint, haversine_distance, point_to_polyline_distance
from .gtfs import GtfsFeed
from .modes import Mode
from .sources import FcdRecord, PtQuery, StreetSegment
from .store import Store, StoreSnapshot
from .timeutil import parse_instant, seconds_since_midnight

DAY_S = 86_400
DEFAULT_BUCKET_S = 1_800
SNAPSHOT_LEAD_S = 1_800  # congestion is sampled half an hour before the event
MIN_BASELINE_DATES = 4


class BadReference(Exception):
    """Free-flow reference speed must be positive."""


class InsufficientHistory(Exception):
    """Fewer prior same-weekday dates than the baseline needs."""


# ---------------------------------------------------------------------------
# mode share


@dataclass(frozen=True)
class ModeShareRow:
    trip_count: int
    total_duration_s: float
    count_share: float
    duration_share: float


@dataclass(frozen=True)
class ModeShare:
    total_trips: int
    rows: dict[str, ModeShareRow]


def mode_share(trips) -> ModeShare:
    """Absolute and relative mode usage for one user.

    `trips` is an iterable of (mode, duration_s) pairs, mode given as a Mode
    or its wire name. Every mode gets a row, including Unknown; with no
    trips all shares are 0 rather than an error.
    """
    counts = {mode.value: 0 for mode in Mode}
    durations = {mode.value: 0.0 for mode in Mode}
    total = 0
    total_duration = 0.0
    for mode, duration_s in trips:
        name = mode.value if isinstance(mode, Mode) else Mode.from_wire(mode).value
        counts[name] += 1
        durations[name] += duration_s
        total += 1
        total_duration += duration_s

    rows = {}
    for name in counts:
        rows[name] = ModeShareRow(
            trip_count=counts[name],
            total_duration_s=durations[name],
            count_share=counts[name] / total if total else 0.0,
            duration_share=(
                durations[name] / total_duration if total_duration > 0 else 0.0
            ),
        )
    return ModeShare(total_trips=total, rows=rows)


# ---------------------------------------------------------------------------
# dataset statistics


@dataclass(frozen=True)
class DatasetStats:
    user_count: int
    trip_count: int
    average_trip_duration_min: float
    gps_point_count: int


def dataset_stats(store: Store | StoreSnapshot) -> DatasetStats:
    """Corpus-level counters: distinct users with trips, trips, the average
    trip duration in minutes, and total GPS points."""
    snapshot = store.snapshot() if isinstance(store, Store) else store
    trips = snapshot.keyed("trips")
    owners = set()
    durations = []
    points = 0
    for trip in trips.values():
        owners.add(trip["owner"])
        points += len(trip["points"])
        started = parse_instant(trip["points"][0]["t"])
        ended = parse_instant(trip["points"][-1]["t"])
        durations.append((ended - started).total_seconds())
    return DatasetStats(
        user_count=len(owners),
        trip_count=len(trips),
        average_trip_duration_min=(
            statistics.fmean(durations) / 60.0 if durations else 0.0
        ),
        gps_point_count=points,
    )


# ---------------------------------------------------------------------------
# per-stop query time series


@dataclass(frozen=True)
class QueryTimeseries:
    stop_id: str
    day: date
    bucket_width_s: int
    counts: tuple[int, ...]


def stop_query_timeseries(
    queries: list[PtQuery],
    stop_id: str,
    day: date,
    bucket_width_s: int = DEFAULT_BUCKET_S,
) -> QueryTimeseries:
    """How often a stop appears in journey planner queries over one day.

    A query counts when its origin or destination is the stop and its wanted
    departure falls on the day; buckets are half-open, so any width dividing
    24 hours preserves the total count.
    """
    if bucket_width_s <= 0 or DAY_S % bucket_width_s:
        raise ValueError(f"bucket width {bucket_width_s} must divide {DAY_S}")
    counts = [0] * (DAY_S // bucket_width_s)
    for query in queries:
        if query.origin != stop_id and query.destination != stop_id:
            continue
        departure = query.departure.astimezone(timezone.utc)
        if departure.date() != day:
            continue
        counts[int(seconds_since_midnight(departure)) // bucket_width_s] += 1
    return QueryTimeseries(
        stop_id=stop_id, day=day, bucket_width_s=bucket_width_s, counts=tuple(counts)
    )


# ---------------------------------------------------------------------------
# congestion


class CongestionBand(enum.Enum):
    HEAVY = "Heavy"
    MEDIUM = "Medium"
    LOW = "Low"


@dataclass(frozen=True)
class CongestionLevel:
    segment_id: str
    interval_start: datetime
    level: CongestionBand
    speed_ratio: float


def percentile_nearest_rank(values: list[float], p: float) -> float:
    """Nearest-rank percentile: the smallest value with at least p percent of
    the sample at or below it."""
    if not values:
        raise ValueError("empty sample")
    if not (0 < p <= 100):
        raise ValueError(f"percentile out of range: {p}")
    ordered = sorted(values)
    rank = math.ceil(p / 100.0 * len(ordered))
    return ordered[max(rank, 1) - 1]


def congestion_level(
    record: FcdRecord,
    reference_speed_kmh: float,
    config: PipelineConfig | None = None,
) -> CongestionLevel:
    """Grade one speed observation against the segment's free-flow speed."""
    config = config or PipelineConfig()
    if not (math.isfinite(reference_speed_kmh) and reference_speed_kmh > 0):
        raise BadReference(f"reference speed {reference_speed_kmh}")
    ratio = min(max(record.avg_speed_kmh / reference_speed_kmh, 0.0), 1.0)
    if ratio < config.heavy_below_ratio:
        band = CongestionBand.HEAVY
    elif ratio < config.medium_below_ratio:
        band = CongestionBand.MEDIUM
    else:
        band = CongestionBand.LOW
    return CongestionLevel(
        segment_id=record.segment_id,
        interval_start=record.interval_start,
        level=band,
        speed_ratio=ratio,
    )


def reference_speeds(records: list[FcdRecord], config: PipelineConfig | None = None
                     ) -> dict[str, float]:
    """Free-flow reference per segment: a high percentile of its history."""
    config = config or PipelineConfig()
    by_segment: dict[str, list[float]] = {}
    for record in records:
        by_segment.setdefault(record.segment_id, []).append(record.avg_speed_kmh)
    return {
        segment_id: percentile_nearest_rank(speeds, config.reference_percentile)
        for segment_id, speeds in by_segment.items()
    }


def floor_to_interval(at: datetime) -> datetime:
    at = at.astimezone(timezone.utc)
    return at.replace(minute=(at.minute // 15) * 15, second=0, microsecond=0)


def congestion_snapshot(
    records: list[FcdRecord],
    at: datetime,
    config: PipelineConfig | None = None,
    segment_ids: set[str] | None = None,
) -> list[CongestionLevel]:
    """Congestion of every segment (or a chosen subset) in the 15-minute
    interval containing `at`. Segments without a usable reference are left
    out; duplicate observations average."""
    config = config or PipelineConfig()
    interval = floor_to_interval(at)
    references = reference_speeds(records, config)
    observed: dict[str, list[float]] = {}
    for record in records:
        if record.interval_start != interval:
            continue
        if segment_ids is not None and record.segment_id not in segment_ids:
            continue
        observed.setdefault(record.segment_id, []).append(record.avg_speed_kmh)

    out = []
    for segment_id in sorted(observed):
        reference = references.get(segment_id, 0.0)
        if reference <= 0:
            continue
        mean_speed = statistics.fmean(observed[segment_id])
        out.append(
            congestion_level(
                FcdRecord(segment_id, interval, mean_speed), reference, config
            )
        )
    return out


# ---------------------------------------------------------------------------
# event impact


@dataclass(frozen=True)
class EventImpactReport:
    venue: GeoPoint
    event_time: datetime
    stop_id: str
    congestion: tuple[CongestionLevel, ...]
    series: QueryTimeseries
    baseline: tuple[float, ...]
    deltas: tuple[float, ...]
    peak_bucket_start: datetime | None
    peak_delta: float


def event_impact_report(
    venue: GeoPoint,
    event_time: datetime,
    radius_m: float,
    horizon_s: float,
    fcd_records: list[FcdRecord],
    queries: list[PtQuery],
    streets: list[StreetSegment],
    feed: GtfsFeed,
    config: PipelineConfig | None = None,
    bucket_width_s: int = DEFAULT_BUCKET_S,
) -> EventImpactReport:
    """How one event shows up in road speeds and transit queries at once.

    Road side: congestion of all street segments within radius_m of the
    venue, sampled half an hour before the event. Transit side: the query
    series of the stop nearest the venue on the event day, against a
    baseline built as the per-bucket median of at least four prior
    same-weekday dates; deltas are event minus baseline. The peak is the
    largest delta within horizon_s around the event time.
    """
    config = config or PipelineConfig()
    event_time = event_time.astimezone(timezone.utc)
    event_day = event_time.date()

    if not feed.stops:
        raise ValueError("feed has no stops")
    stop_id = min(
        feed.stops.values(),
        key=lambda s: (haversine_distance(venue, s.location), s.stop_id),
    ).stop_id

    prior_days = sorted(
        {
            q.departure.astimezone(timezone.utc).date()
            for q in queries
            if q.departure.astimezone(timezone.utc).date() < event_day
            and q.departure.astimezone(timezone.utc).date().weekday()
            == event_day.weekday()
        }
    )
    if len(prior_days) < MIN_BASELINE_DATES:
        raise InsufficientHistory(
            f"{len(prior_days)} prior same-weekday dates, need {MIN_BASELINE_DATES}"
        )

    series = stop_query_timeseries(queries, stop_id, event_day, bucket_width_s)
    history = [
        stop_query_timeseries(queries, stop_id, day, bucket_width_s).counts
        for day in prior_days
    ]
    baseline = tuple(
        float(statistics.median([counts[i] for counts in history]))
        for i in range(len(series.counts))
    )
    deltas = tuple(series.counts[i] - baseline[i] for i in range(len(baseline)))

    nearby = {
        s.segment_id
        for s in streets
        if point_to_polyline_distance(venue, s.geometry) <= radius_m
    }
    congestion = tuple(
        congestion_snapshot(
            fcd_records,
            event_time - timedelta(seconds=SNAPSHOT_LEAD_S),
            config,
            segment_ids=nearby,
        )
    ) if nearby else ()

    midnight = datetime(
        event_day.year, event_day.month, event_day.day, tzinfo=timezone.utc
    )
    window_lo = event_time - timedelta(seconds=horizon_s)
    window_hi = event_time + timedelta(seconds=horizon_s)
    peak_index = None
    for i, delta in enumerate(deltas):
        bucket_start = midnight + timedelta(seconds=i * bucket_width_s)
        if not (window_lo <= bucket_start < window_hi):
            continue
        if peak_index is None or delta > deltas[peak_index]:
            peak_index = i
    peak_start = (
        midnight + timedelta(seconds=peak_index * bucket_width_s)
        if peak_index is not None
        else None
    )
    return EventImpactReport(
        venue=venue,
        event_time=event_time,
        stop_id=stop_id,
        congestion=congestion,
        series=series,
        baseline=baseline,
        deltas=deltas,
        peak_bucket_start=peak_start,
        peak_delta=deltas[peak_index] if peak_index is not None else 0.0,
    )
