"""Trip assembly and activity-based segmentation of GPS traces.

A recording arrives as a bag of timestamped points, each carrying the activity
guess reported by the phone. Assembly cleans the bag into a Trip; segmentation
cuts the trip at activity changes, with hysteresis so short misdetections do
not shred a ride into confetti.
"""

from __future__ import annotations

import enum
import math
import statistics
import uuid
from dataclasses import dataclass
from datetime import datetime

from .config import PipelineConfig
from .geo import GeoPoint, haversine_distance


class TooFewPoints(Exception):
    """Raised when a recording has fewer than two usable points."""


class ActivityKind(enum.Enum):
    STILL = "Still"
    ON_FOOT = "OnFoot"
    ON_BICYCLE = "OnBicycle"
    IN_VEHICLE = "InVehicle"
    UNKNOWN = "Unknown"

    @classmethod
    def from_wire(cls, value: str) -> "ActivityKind":
        for kind in cls:
            if kind.value == value:
                return kind
        raise ValueError(f"unknown activity kind: {value!r}")


@dataclass(frozen=True)
class ActivityLabel:
    kind: ActivityKind
    confidence: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence out of range: {self.confidence}")


@dataclass(frozen=True)
class TracePoint:
    timestamp: datetime
    location: GeoPoint
    accuracy_m: float
    activity: ActivityLabel
    client_speed_mps: float | None = None

    def __post_init__(self):
        if self.timestamp.tzinfo is None:
            raise ValueError("trace point timestamp must be timezone-aware")
        if not (math.isfinite(self.accuracy_m) and self.accuracy_m >= 0):
            raise ValueError(f"bad accuracy: {self.accuracy_m}")
        if self.client_speed_mps is not None:
            if not (math.isfinite(self.client_speed_mps) and self.client_speed_mps >= 0):
                raise ValueError(f"bad client speed: {self.client_speed_mps}")


@dataclass(frozen=True)
class Trip:
    trip_id: str
    owner: str
    points: tuple[TracePoint, ...]

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("a trip needs at least two points")
        for prev, cur in zip(self.points, self.points[1:]):
            if cur.timestamp <= prev.timestamp:
                raise ValueError("trip points must be strictly ordered in time")

    @property
    def started_at(self) -> datetime:
        return self.points[0].timestamp

    @property
    def ended_at(self) -> datetime:
        return self.points[-1].timestamp


@dataclass(frozen=True)
class Segment:
    """A maximal run of one activity kind inside a trip.

    start_index records where the slice begins in the parent trip, so
    concatenating segment point tuples in order reproduces trip.points.
    """

    trip_id: str
    start_index: int
    points: tuple[TracePoint, ...]
    dominant_kind: ActivityKind

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("a segment needs at least two points")

    @property
    def duration_s(self) -> float:
        return (self.points[-1].timestamp - self.points[0].timestamp).total_seconds()

    @property
    def length_m(self) -> float:
        return sum(
            haversine_distance(a.location, b.location)
            for a, b in zip(self.points, self.points[1:])
        )

    @property
    def started_at(self) -> datetime:
        return self.points[0].timestamp

    @property
    def ended_at(self) -> datetime:
        return self.points[-1].timestamp


def assemble_trip(
    owner: str,
    raw_points: list[TracePoint],
    config: PipelineConfig | None = None,
    trip_id: str | None = None,
) -> tuple[Trip, int]:
    """Filter, order and dedupe raw points into a Trip.

    Points with accuracy worse than the cutoff are dropped. Among points that
    share a timestamp only the most accurate one survives. Returns the trip
    and the number of points dropped; raises TooFewPoints if fewer than two
    points remain.
    """
    config = config or PipelineConfig()
    usable = [p for p in raw_points if p.accuracy_m <= config.accuracy_cutoff_m]
    usable.sort(key=lambda p: p.timestamp)

    kept: list[TracePoint] = []
    for point in usable:
        if kept and kept[-1].timestamp == point.timestamp:
            if point.accuracy_m < kept[-1].accuracy_m:
                kept[-1] = point
        else:
            kept.append(point)

    if len(kept) < 2:
        raise TooFewPoints(
            f"{len(kept)} usable points of {len(raw_points)}; need at least 2"
        )
    trip = Trip(
        trip_id=trip_id or uuid.uuid4().hex,
        owner=owner,
        points=tuple(kept),
    )
    return trip, len(raw_points) - len(kept)


def _effective_kinds(points: tuple[TracePoint, ...]) -> list[ActivityKind]:
    """Unknown points inherit the nearest preceding known kind; a leading
    Unknown stretch inherits the first known kind. All-Unknown stays Unknown."""
    kinds = [p.activity.kind for p in points]
    first_known = next(
        (k for k in kinds if k is not ActivityKind.UNKNOWN), ActivityKind.UNKNOWN
    )
    current = first_known
    out = []
    for kind in kinds:
        if kind is not ActivityKind.UNKNOWN:
            current = kind
        out.append(current)
    return out


def segment_by_activity(
    trip: Trip, config: PipelineConfig | None = None
) -> list[Segment]:
    """Split a trip into activity segments.

    A change of activity only opens a new segment once it has persisted for
    the hysteresis interval; shorter flickers are absorbed into the running
    segment. Afterwards any segment shorter than the merge floor is folded
    into its longer neighbour until none remain (a single segment may be
    arbitrarily short). Segments partition the trip's points exactly.
    """
    config = config or PipelineConfig()
    kinds = _effective_kinds(trip.points)
    times = [p.timestamp for p in trip.points]

    # run-length encode: (kind, first_index, last_index), inclusive
    runs: list[list] = []
    for i, kind in enumerate(kinds):
        if runs and runs[-1][0] is kind:
            runs[-1][2] = i
        else:
            runs.append([kind, i, i])

    def span_s(first: int, last: int) -> float:
        return (times[last] - times[first]).total_seconds()

    # hysteresis: a run must persist long enough to open a new segment
    committed: list[list] = []
    for kind, first, last in runs:
        if not committed:
            committed.append([kind, first, last])
        elif committed[-1][0] is kind:
            committed[-1][2] = last
        elif span_s(first, last) >= config.hysteresis_s:
            committed.append([kind, first, last])
        else:
            committed[-1][2] = last

    # merge floor: fold sub-floor segments into the longer neighbour
    while len(committed) > 1:
        durations = [span_s(first, last) for _, first, last in committed]
        shortest = min(range(len(committed)), key=lambda i: (durations[i], i))
        if durations[shortest] >= config.merge_floor_s:
            break
        if shortest == 0:
            target = 1
        elif shortest == len(committed) - 1:
            target = shortest - 1
        else:
            left_d = durations[shortest - 1]
            right_d = durations[shortest + 1]
            target = shortest - 1 if left_d >= right_d else shortest + 1
        lo, hi = sorted((shortest, target))
        committed[lo] = [committed[target][0], committed[lo][1], committed[hi][2]]
        del committed[hi]
        # folding can leave equal kinds adjacent; re-join them
        joined: list[list] = []
        for kind, first, last in committed:
            if joined and joined[-1][0] is kind:
                joined[-1][2] = last
            else:
                joined.append([kind, first, last])
        committed = joined

    segments = []
    for kind, first, last in committed:
        segments.append(
            Segment(
                trip_id=trip.trip_id,
                start_index=first,
                points=trip.points[first : last + 1],
                dominant_kind=kind,
            )
        )
    return segments


@dataclass(frozen=True)
class GeometryStats:
    duration_s: float
    length_m: float
    median_speed_mps: float


def trip_geometry_stats(
    trip: Trip, config: PipelineConfig | None = None
) -> GeometryStats:
    """Duration, path length and median point-to-point speed of a trip.

    Speeds across recording gaps longer than the gap cutoff are excluded from
    the median (the device likely paused); the gap still counts toward
    duration and length.
    """
    config = config or PipelineConfig()
    duration = (trip.ended_at - trip.started_at).total_seconds()
    length = 0.0
    speeds = []
    for a, b in zip(trip.points, trip.points[1:]):
        dist = haversine_distance(a.location, b.location)
        length += dist
        dt = (b.timestamp - a.timestamp).total_seconds()
        if 0 < dt <= config.gap_cutoff_s:
            speeds.append(dist / dt)
    median_speed = statistics.median(speeds) if speeds else 0.0
    return GeometryStats(duration_s=duration, length_m=length, median_speed_mps=median_speed)
