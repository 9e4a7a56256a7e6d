"""Per-segment travel mode inference and schedule-based transit matching.

The phone's activity recognition separates walking, cycling and "in a
vehicle", but cannot tell a car from a tram or bus. That last call is made
here by checking the segment against the timetable: if a scheduled trip
starts near the segment's first point, ends near its last point, runs at the
right time and its route shape hugs the trace, the segment is that transit
ride and we know the entry stop, exit stop and line. If nothing in the
timetable fits, it was a car.
"""

from __future__ import annotations

import enum
import math
import statistics
from dataclasses import dataclass

from .config import PipelineConfig
from .geo import point_to_polyline_distance
from .gtfs import GtfsFeed, RouteType
from .timeutil import seconds_since_midnight
from .traces import ActivityKind, Segment


class LengthMismatch(Exception):
    """Classified list and ground-truth list differ in length."""


class Mode(enum.Enum):
    WALK = "Walk"
    BICYCLE = "Bicycle"
    CAR = "Car"
    TRAM = "Tram"
    BUS = "Bus"
    UNKNOWN = "Unknown"

    @classmethod
    def from_wire(cls, value: str) -> "Mode":
        for mode in cls:
            if mode.value == value:
                return mode
        raise ValueError(f"unknown mode: {value!r}")


@dataclass(frozen=True)
class ModeLabel:
    mode: Mode
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence out of range: {self.confidence}")


@dataclass(frozen=True)
class PtEnrichment:
    """Entry stop, exit stop and line attached to a recognised transit ride."""

    entry_stop_id: str
    exit_stop_id: str
    route_id: str
    trip_id: str
    schedule_deviation_s: float

    def __post_init__(self):
        if self.entry_stop_id == self.exit_stop_id:
            raise ValueError("entry and exit stop must differ")
        if not (math.isfinite(self.schedule_deviation_s) and self.schedule_deviation_s >= 0):
            raise ValueError(f"bad schedule deviation: {self.schedule_deviation_s}")


@dataclass(frozen=True)
class MatchCandidate:
    trip_id: str
    route_id: str
    entry_stop_id: str
    exit_stop_id: str
    dep_a: int
    arr_b: int
    spatial_score: float
    temporal_score: float

    def __post_init__(self):
        if self.spatial_score < 0 or self.temporal_score < 0:
            raise ValueError("scores must be non-negative")


def candidate_sort_key(c: MatchCandidate):
    """Total order over candidates. Temporal fit first, then spatial fit,
    then ids and times so equal-score candidates resolve deterministically."""
    return (
        c.temporal_score,
        c.spatial_score,
        c.route_id,
        c.trip_id,
        c.entry_stop_id,
        c.exit_stop_id,
        c.dep_a,
        c.arr_b,
    )


def observed_window(segment: Segment) -> tuple[float, float]:
    """Segment start and end as seconds since midnight of the segment's
    (UTC) start date. The end is start + duration so a ride across midnight
    keeps increasing past 86400, matching the timetable convention."""
    start = seconds_since_midnight(segment.started_at)
    return start, start + segment.duration_s


def match_transit(
    segment: Segment, feed: GtfsFeed, config: PipelineConfig | None = None
) -> MatchCandidate | None:
    """Find the scheduled trip best explaining a segment, or None.

    Entry candidates are stops within entry_radius_m of the first point, exit
    candidates likewise for the last point. For every (entry, exit) pair every
    trip visit with a departure within temporal_tolerance_s of the observed
    start is scored; candidates whose route shape stays within
    spatial_accept_m of the trace on average survive, and the best survivor
    under candidate_sort_key wins.
    """
    config = config or PipelineConfig()
    day = segment.started_at.date()
    obs_start, obs_end = observed_window(segment)

    entry_hits = feed.stop_index.nearest_within(
        segment.points[0].location, config.entry_radius_m
    )
    exit_hits = feed.stop_index.nearest_within(
        segment.points[-1].location, config.entry_radius_m
    )
    if not entry_hits or not exit_hits:
        return None

    window = (
        obs_start - config.temporal_tolerance_s,
        obs_start + config.temporal_tolerance_s + 1,
    )
    spatial_cache: dict[str, float | None] = {}

    def spatial_score(trip_id: str) -> float | None:
        if trip_id not in spatial_cache:
            shape = feed.shape_for_trip(trip_id)
            if shape is None:
                spatial_cache[trip_id] = None
            else:
                spatial_cache[trip_id] = statistics.fmean(
                    point_to_polyline_distance(p.location, shape)
                    for p in segment.points
                )
        return spatial_cache[trip_id]

    best: MatchCandidate | None = None
    for entry_id, _ in entry_hits:
        for exit_id, _ in exit_hits:
            if entry_id == exit_id:
                continue
            for svc in feed.trips_serving_pair(entry_id, exit_id, day, window):
                if abs(svc.dep_a - obs_start) > config.temporal_tolerance_s:
                    continue
                spatial = spatial_score(svc.trip_id)
                if spatial is None or spatial > config.spatial_accept_m:
                    continue
                temporal = (
                    abs(obs_start - svc.dep_a) + abs(obs_end - svc.arr_b)
                ) / 2.0
                candidate = MatchCandidate(
                    trip_id=svc.trip_id,
                    route_id=svc.route_id,
                    entry_stop_id=entry_id,
                    exit_stop_id=exit_id,
                    dep_a=svc.dep_a,
                    arr_b=svc.arr_b,
                    spatial_score=spatial,
                    temporal_score=temporal,
                )
                if best is None or candidate_sort_key(candidate) < candidate_sort_key(best):
                    best = candidate
    return best


def _duration_shares(segment: Segment) -> dict[ActivityKind, float]:
    """Fraction of the segment's time span spent under each reported kind.
    Each inter-point interval is attributed to the kind of its first point."""
    total = segment.duration_s
    weights: dict[ActivityKind, float] = {}
    for a, b in zip(segment.points, segment.points[1:]):
        dt = (b.timestamp - a.timestamp).total_seconds()
        kind = a.activity.kind
        weights[kind] = weights.get(kind, 0.0) + dt
    return {kind: w / total for kind, w in weights.items()}


_KIND_TO_MODE = {
    ActivityKind.ON_FOOT: Mode.WALK,
    ActivityKind.ON_BICYCLE: Mode.BICYCLE,
}

_ROUTE_TYPE_TO_MODE = {
    RouteType.TRAM: Mode.TRAM,
    RouteType.BUS: Mode.BUS,
}


def classify_segment(
    segment: Segment, feed: GtfsFeed | None, config: PipelineConfig | None = None
) -> tuple[ModeLabel, PtEnrichment | None]:
    """Assign a travel mode to a segment.

    Decision order: too few points or mostly Unknown labels sink to Unknown;
    otherwise the duration-weighted majority kind decides. Walking and
    cycling map directly. In-vehicle segments go through match_transit: a hit
    yields Tram or Bus (route types other than tram and bus keep the
    enrichment but report Unknown), a miss means Car. Confidence is the
    majority share, damped when the transit check had to disambiguate.
    A mostly stationary segment is not travel, so it reports Unknown too.
    """
    config = config or PipelineConfig()
    if len(segment.points) < config.min_segment_points:
        return ModeLabel(Mode.UNKNOWN, 0.0), None

    shares = _duration_shares(segment)
    unknown_share = shares.get(ActivityKind.UNKNOWN, 0.0)
    if unknown_share > 0.5:
        return ModeLabel(Mode.UNKNOWN, unknown_share), None

    known = {k: v for k, v in shares.items() if k is not ActivityKind.UNKNOWN}
    if not known:
        return ModeLabel(Mode.UNKNOWN, 1.0), None
    majority = min(known, key=lambda k: (-known[k], k.value))
    share = known[majority]

    if majority is ActivityKind.STILL:
        return ModeLabel(Mode.UNKNOWN, share), None
    if majority in _KIND_TO_MODE:
        return ModeLabel(_KIND_TO_MODE[majority], share), None

    # in a vehicle: the timetable decides between transit and car
    damped = share * 0.8
    candidate = match_transit(segment, feed, config) if feed is not None else None
    if candidate is None:
        return ModeLabel(Mode.CAR, damped), None
    enrichment = PtEnrichment(
        entry_stop_id=candidate.entry_stop_id,
        exit_stop_id=candidate.exit_stop_id,
        route_id=candidate.route_id,
        trip_id=candidate.trip_id,
        schedule_deviation_s=candidate.temporal_score,
    )
    route_type = feed.routes[candidate.route_id].route_type
    mode = _ROUTE_TYPE_TO_MODE.get(route_type, Mode.UNKNOWN)
    return ModeLabel(mode, damped), enrichment


# ---------------------------------------------------------------------------
# evaluation against ground truth


@dataclass(frozen=True)
class ClassifiedTrip:
    """One evaluated trip: the predicted label plus what it was matched to."""

    label: ModeLabel
    enrichment: PtEnrichment | None
    duration_s: float


@dataclass(frozen=True)
class TruthRecord:
    mode: Mode
    entry_stop_id: str | None = None
    exit_stop_id: str | None = None
    route_id: str | None = None


@dataclass(frozen=True)
class ModeRow:
    mode: str
    count: int
    median_duration_s: float
    correct: int
    accuracy: float


@dataclass(frozen=True)
class AccuracyReport:
    rows: tuple[ModeRow, ...]
    total: ModeRow


_TRANSIT_MODES = (Mode.TRAM, Mode.BUS)

_ROW_ORDER = [Mode.WALK, Mode.BICYCLE, Mode.CAR, Mode.TRAM, Mode.BUS, Mode.UNKNOWN]


def _is_correct(predicted: ClassifiedTrip, truth: TruthRecord) -> bool:
    if predicted.label.mode is not truth.mode:
        return False
    if truth.mode not in _TRANSIT_MODES:
        return True
    # transit counts only with the right entry stop, exit stop and line
    e = predicted.enrichment
    return (
        e is not None
        and e.entry_stop_id == truth.entry_stop_id
        and e.exit_stop_id == truth.exit_stop_id
        and e.route_id == truth.route_id
    )


def evaluate_against_ground_truth(
    classified: list[ClassifiedTrip], truth: list[TruthRecord]
) -> AccuracyReport:
    """Per-mode counts, median durations and accuracy, with a total row.

    Rows group by the true mode. A tram or bus trip is correct only when the
    mode, entry stop, exit stop and line all match; other modes count on the
    mode alone.
    """
    if len(classified) != len(truth):
        raise LengthMismatch(f"{len(classified)} classified vs {len(truth)} truth")
    if not truth:
        raise LengthMismatch("nothing to evaluate")

    def build_row(name: str, indices: list[int]) -> ModeRow:
        correct = sum(1 for i in indices if _is_correct(classified[i], truth[i]))
        durations = [classified[i].duration_s for i in indices]
        return ModeRow(
            mode=name,
            count=len(indices),
            median_duration_s=statistics.median(durations),
            correct=correct,
            accuracy=correct / len(indices),
        )

    rows = []
    for mode in _ROW_ORDER:
        indices = [i for i, t in enumerate(truth) if t.mode is mode]
        if indices:
            rows.append(build_row(mode.value, indices))
    total = build_row("Total", list(range(len(truth))))
    return AccuracyReport(rows=tuple(rows), total=total)
