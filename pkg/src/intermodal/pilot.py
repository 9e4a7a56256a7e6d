"""Synthetic pilot corpus: a toy city, its timetable and labelled trips.

The generator builds a deterministic grid city (two east-west tram lines,
two north-south bus lines, 15-minute headways) and samples trips of known
mode against it. Transit trips ride a scheduled vehicle stop-to-stop, so
their ground truth (entry stop, exit stop, line) is exact by construction;
car and bicycle trips run in districts far from any stop. Gaussian position
noise and uniform label corruption are optional knobs. Everything is driven
by one seeded RNG, so equal specs produce byte-identical corpora.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

from .config import PipelineConfig
from .geo import EARTH_RADIUS_M, GeoPoint
from .gtfs import (
    GtfsFeed,
    Route,
    RouteType,
    ServiceCalendar,
    Stop,
    StopTime,
    TripSchedule,
    load_gtfs,
    write_gtfs,
)
from .modes import (
    AccuracyReport,
    ClassifiedTrip,
    Mode,
    TruthRecord,
    classify_segment,
    evaluate_against_ground_truth,
)
from .store import canonical_json, trip_from_record, trip_to_record
from .traces import ActivityKind, ActivityLabel, TracePoint, Trip, segment_by_activity

M_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0

PILOT_DAY = date(2025, 3, 3)  # a Monday
SAMPLE_STEP_S = 5.0

FIRST_DEPARTURE_S = 6 * 3600
LAST_DEPARTURE_S = 21 * 3600
HEADWAY_S = 900
LEG_TIME_S = 120
STOPS_PER_LINE = 8


@dataclass(frozen=True)
class SyntheticPilotSpec:
    bicycle_trips: int = 16
    car_trips: int = 14
    tram_trips: int = 13
    bus_trips: int = 15
    gps_noise_sigma_m: float = 0.0
    label_corruption: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("bicycle_trips", "car_trips", "tram_trips", "bus_trips"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.gps_noise_sigma_m < 0:
            raise ValueError("gps_noise_sigma_m must be non-negative")
        if not 0.0 <= self.label_corruption <= 1.0:
            raise ValueError("label_corruption must be within [0, 1]")


@dataclass
class PilotBundle:
    spec: SyntheticPilotSpec
    feed: GtfsFeed
    trips: list[Trip]
    truths: list[TruthRecord]


def build_city_feed() -> GtfsFeed:
    """Four lines on a grid; every line departs each terminus every 15
    minutes between 06:00 and 21:00 with 120 s between stops."""
    stops: dict[str, Stop] = {}
    routes: dict[str, Route] = {}
    trips: dict[str, TripSchedule] = {}

    def add_line(route_id, short_name, type_code, stop_ids, locations):
        routes[route_id] = Route(
            route_id, short_name, RouteType.from_code(type_code), type_code
        )
        for stop_id, location in zip(stop_ids, locations):
            stops[stop_id] = Stop(stop_id, stop_id, location)
        n_departures = (LAST_DEPARTURE_S - FIRST_DEPARTURE_S) // HEADWAY_S + 1
        for k in range(n_departures):
            dep = FIRST_DEPARTURE_S + k * HEADWAY_S
            stop_times = tuple(
                StopTime(stop_id, dep + i * LEG_TIME_S, dep + i * LEG_TIME_S, i + 1)
                for i, stop_id in enumerate(stop_ids)
            )
            trip_id = f"{route_id}-{k:02d}"
            trips[trip_id] = TripSchedule(trip_id, route_id, "DAILY", stop_times)

    add_line(
        "TRAM-A", "1", 0,
        [f"TA{i}" for i in range(STOPS_PER_LINE)],
        [GeoPoint(52.40, 9.70 + 0.006 * i) for i in range(STOPS_PER_LINE)],
    )
    add_line(
        "TRAM-B", "2", 0,
        [f"TB{i}" for i in range(STOPS_PER_LINE)],
        [GeoPoint(52.43, 9.70 + 0.006 * i) for i in range(STOPS_PER_LINE)],
    )
    add_line(
        "BUS-A", "21", 3,
        [f"BA{i}" for i in range(STOPS_PER_LINE)],
        [GeoPoint(52.40 + 0.004 * i, 9.76) for i in range(STOPS_PER_LINE)],
    )
    add_line(
        "BUS-B", "22", 3,
        [f"BB{i}" for i in range(STOPS_PER_LINE)],
        [GeoPoint(52.40 + 0.004 * i, 9.79) for i in range(STOPS_PER_LINE)],
    )

    calendar = ServiceCalendar(
        base={"DAILY": ((True,) * 7, date(2025, 1, 1), date(2025, 12, 31))}
    )
    return GtfsFeed(stops, routes, trips, calendar)


def _midnight() -> datetime:
    return datetime(
        PILOT_DAY.year, PILOT_DAY.month, PILOT_DAY.day, tzinfo=timezone.utc
    )


def _point(t_s: float, lat: float, lon: float, kind: ActivityKind) -> TracePoint:
    return TracePoint(
        timestamp=_midnight() + timedelta(seconds=t_s),
        location=GeoPoint(lat, lon),
        accuracy_m=8.0,
        activity=ActivityLabel(kind),
    )


def _ride(feed: GtfsFeed, timetable_trip_id: str, i: int, j: int) -> list[TracePoint]:
    """Sample a vehicle on a scheduled trip every 5 s from stop i to stop j;
    positions interpolate the stop polyline on the scheduled leg times."""
    sts = feed.trips[timetable_trip_id].stop_times[i : j + 1]
    locs = [feed.stops[st.stop_id].location for st in sts]
    t0, t1 = sts[0].departure, sts[-1].arrival

    def position(t: float) -> GeoPoint:
        for k in range(len(sts) - 1):
            if t <= sts[k + 1].arrival:
                leg = sts[k + 1].arrival - sts[k].departure
                u = 1.0 if leg <= 0 else max(0.0, (t - sts[k].departure) / leg)
                a, b = locs[k], locs[k + 1]
                return GeoPoint(a.lat + (b.lat - a.lat) * u, a.lon + (b.lon - a.lon) * u)
        return locs[-1]

    points = []
    t = float(t0)
    while t <= t1:
        loc = position(t)
        points.append(_point(t, loc.lat, loc.lon, ActivityKind.IN_VEHICLE))
        t += SAMPLE_STEP_S
    return points


def _straight_leg(
    rng: random.Random,
    kind: ActivityKind,
    speed_range: tuple[float, float],
    duration_range: tuple[float, float],
    lat_range: tuple[float, float],
    lon_range: tuple[float, float],
    max_end_lat: float,
) -> list[TracePoint]:
    """A constant-speed straight run starting inside the given box. Headings
    that would carry the trip north of max_end_lat are resampled, keeping
    cars and bicycles kilometres away from every transit stop."""
    while True:
        lat0 = rng.uniform(*lat_range)
        lon0 = rng.uniform(*lon_range)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        speed = rng.uniform(*speed_range)
        duration = rng.randrange(
            int(duration_range[0]), int(duration_range[1]) + 1, int(SAMPLE_STEP_S)
        )
        end_lat = lat0 + speed * duration * math.cos(heading) / M_PER_DEG_LAT
        if end_lat <= max_end_lat:
            break

    start_s = rng.randrange(6 * 3600, 20 * 3600, 60)
    lon_scale = M_PER_DEG_LAT * math.cos(math.radians(lat0))
    points = []
    steps = int(duration / SAMPLE_STEP_S)
    for n in range(steps + 1):
        t = n * SAMPLE_STEP_S
        lat = lat0 + speed * t * math.cos(heading) / M_PER_DEG_LAT
        lon = lon0 + speed * t * math.sin(heading) / lon_scale
        points.append(_point(start_s + t, lat, lon, kind))
    return points


def _perturb(
    points: list[TracePoint], rng: random.Random, spec: SyntheticPilotSpec
) -> list[TracePoint]:
    kinds = list(ActivityKind)
    out = []
    for p in points:
        lat = p.location.lat + rng.gauss(0.0, spec.gps_noise_sigma_m) / M_PER_DEG_LAT
        lon = p.location.lon + rng.gauss(0.0, spec.gps_noise_sigma_m) / (
            M_PER_DEG_LAT * math.cos(math.radians(p.location.lat))
        )
        kind = p.activity.kind
        if rng.random() < spec.label_corruption:
            kind = rng.choice(kinds)
        out.append(
            TracePoint(
                timestamp=p.timestamp,
                location=GeoPoint(lat, lon),
                accuracy_m=p.accuracy_m,
                activity=ActivityLabel(kind),
            )
        )
    return out


def generate_pilot(spec: SyntheticPilotSpec) -> PilotBundle:
    rng = random.Random(spec.seed)
    feed = build_city_feed()

    legs: list[tuple[str, list[TracePoint], TruthRecord]] = []

    for n in range(spec.bicycle_trips):
        points = _straight_leg(
            rng, ActivityKind.ON_BICYCLE,
            speed_range=(3.0, 6.0), duration_range=(240.0, 900.0),
            lat_range=(52.355, 52.375), lon_range=(9.64, 9.68),
            max_end_lat=52.39,
        )
        legs.append((f"pilot-bicycle-{n:03d}", points, TruthRecord(Mode.BICYCLE)))

    for n in range(spec.car_trips):
        points = _straight_leg(
            rng, ActivityKind.IN_VEHICLE,
            speed_range=(8.0, 14.0), duration_range=(300.0, 900.0),
            lat_range=(52.30, 52.34), lon_range=(9.62, 9.72),
            max_end_lat=52.37,
        )
        legs.append((f"pilot-car-{n:03d}", points, TruthRecord(Mode.CAR)))

    def ride_leg(name_prefix, route_ids, mode, n):
        route_id = rng.choice(route_ids)
        k = rng.randrange((LAST_DEPARTURE_S - FIRST_DEPARTURE_S) // HEADWAY_S + 1)
        i = rng.randrange(0, STOPS_PER_LINE - 1)
        j = rng.randrange(i + 1, STOPS_PER_LINE)
        timetable_trip_id = f"{route_id}-{k:02d}"
        sts = feed.trips[timetable_trip_id].stop_times
        points = _ride(feed, timetable_trip_id, i, j)
        truth = TruthRecord(
            mode,
            entry_stop_id=sts[i].stop_id,
            exit_stop_id=sts[j].stop_id,
            route_id=route_id,
        )
        legs.append((f"pilot-{name_prefix}-{n:03d}", points, truth))

    for n in range(spec.tram_trips):
        ride_leg("tram", ["TRAM-A", "TRAM-B"], Mode.TRAM, n)
    for n in range(spec.bus_trips):
        ride_leg("bus", ["BUS-A", "BUS-B"], Mode.BUS, n)

    trips = []
    truths = []
    for index, (trip_id, points, truth) in enumerate(legs):
        noisy = _perturb(points, rng, spec)
        trips.append(
            Trip(trip_id=trip_id, owner=f"user-{index % 6:02d}", points=tuple(noisy))
        )
        truths.append(truth)
    return PilotBundle(spec=spec, feed=feed, trips=trips, truths=truths)


# ---------------------------------------------------------------------------
# evaluation


def classify_trip(
    trip: Trip, feed: GtfsFeed | None, config: PipelineConfig | None = None
) -> ClassifiedTrip:
    """One verdict per trip: its longest activity segment decides."""
    config = config or PipelineConfig()
    segments = segment_by_activity(trip, config)
    longest = max(segments, key=lambda s: s.duration_s)
    label, enrichment = classify_segment(longest, feed, config)
    duration = (trip.ended_at - trip.started_at).total_seconds()
    return ClassifiedTrip(label=label, enrichment=enrichment, duration_s=duration)


def evaluate_pilot(
    bundle: PilotBundle, config: PipelineConfig | None = None
) -> AccuracyReport:
    classified = [classify_trip(trip, bundle.feed, config) for trip in bundle.trips]
    return evaluate_against_ground_truth(classified, bundle.truths)


def format_accuracy_table(report: AccuracyReport) -> str:
    """Render rows as Mode / Number / Median Duration / Accuracy."""
    header = ("Mode", "Number", "Median Duration", "Accuracy")
    body = []
    for row in list(report.rows) + [report.total]:
        body.append(
            (
                row.mode,
                str(row.count),
                f"{row.median_duration_s / 60.0:.1f} min",
                f"{row.accuracy * 100.0:.1f}%",
            )
        )
    widths = [
        max(len(header[c]), max(len(line[c]) for line in body))
        for c in range(len(header))
    ]
    def fmt(cells):
        first = cells[0].ljust(widths[0])
        rest = [cells[c].rjust(widths[c]) for c in range(1, len(cells))]
        return "  ".join([first] + rest)

    lines = [fmt(header)]
    lines.extend(fmt(line) for line in body)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# on-disk layout used by the command line tools


def write_pilot(bundle: PilotBundle, directory: str | Path):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_gtfs(bundle.feed, str(directory / "gtfs"))
    with open(directory / "trips.jsonl", "w", encoding="utf-8") as handle:
        for trip in bundle.trips:
            handle.write(canonical_json(trip_to_record(trip)))
            handle.write("\n")
    with open(directory / "truth.jsonl", "w", encoding="utf-8") as handle:
        for trip, truth in zip(bundle.trips, bundle.truths):
            record = {
                "trip_id": trip.trip_id,
                "mode": truth.mode.value,
                "entry_stop_id": truth.entry_stop_id,
                "exit_stop_id": truth.exit_stop_id,
                "route_id": truth.route_id,
            }
            handle.write(canonical_json(record))
            handle.write("\n")
    (directory / "spec.json").write_text(
        canonical_json(asdict(bundle.spec)) + "\n", encoding="utf-8"
    )


def load_pilot(directory: str | Path) -> PilotBundle:
    directory = Path(directory)
    spec = SyntheticPilotSpec(
        **json.loads((directory / "spec.json").read_text(encoding="utf-8"))
    )
    feed = load_gtfs(str(directory / "gtfs"))
    trips = []
    with open(directory / "trips.jsonl", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                trips.append(trip_from_record(json.loads(line)))
    truths = []
    with open(directory / "truth.jsonl", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            truths.append(
                TruthRecord(
                    mode=Mode.from_wire(record["mode"]),
                    entry_stop_id=record["entry_stop_id"],
                    exit_stop_id=record["exit_stop_id"],
                    route_id=record["route_id"],
                )
            )
    if len(trips) != len(truths):
        raise ValueError("trips.jsonl and truth.jsonl disagree in length")
    return PilotBundle(spec=spec, feed=feed, trips=trips, truths=truths)
