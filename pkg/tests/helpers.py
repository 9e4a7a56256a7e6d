"""Shared fixtures-in-code: toy feed writers, random feed generation, oracles."""

from __future__ import annotations

import math
import random
from datetime import date, datetime, timedelta, timezone

from intermodal.geo import (EARTH_RADIUS_M, GeoPoint, haversine_distance,
                            point_to_polyline_distance)
from intermodal.modes import MatchCandidate, candidate_sort_key
from intermodal.traces import ActivityKind, ActivityLabel, Segment, TracePoint
from intermodal.gtfs import (
    GtfsFeed,
    PairService,
    Route,
    RouteType,
    ServiceCalendar,
    Stop,
    StopTime,
    TripSchedule,
)

SERVICE_DAY = date(2025, 3, 3)  # a Monday

MINIMAL_FEED = {
    "stops.txt": (
        "stop_id,stop_name,stop_lat,stop_lon\n"
        "S1,Market,52.3700,9.7300\n"
        "S2,Bridge,52.3740,9.7300\n"
        "S3,Park,52.3780,9.7300\n"
    ),
    "routes.txt": "route_id,route_short_name,route_type\nR1,1,0\n",
    "trips.txt": "route_id,service_id,trip_id\nR1,WD,T1\n",
    "stop_times.txt": (
        "trip_id,arrival_time,departure_time,stop_id,stop_sequence\n"
        "T1,08:00:00,08:00:00,S1,1\n"
        "T1,08:05:00,08:05:00,S2,2\n"
        "T1,08:10:00,08:10:00,S3,3\n"
    ),
    "calendar.txt": (
        "service_id,monday,tuesday,wednesday,thursday,friday,saturday,sunday,start_date,end_date\n"
        "WD,1,1,1,1,1,1,1,20250101,20251231\n"
    ),
}


def write_feed_files(directory, overrides=None, omit=()):
    files = dict(MINIMAL_FEED)
    files.update(overrides or {})
    for name in omit:
        files.pop(name, None)
    directory.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        (directory / name).write_text(content, encoding="utf-8")
    return directory


def random_feed(rng: random.Random, max_stops=50, max_trips=200,
                box=(52.0, 52.5, 9.0, 9.5)) -> GtfsFeed:
    """A random small feed: arbitrary stop placement, increasing stop times."""
    lat0, lat1, lon0, lon1 = box
    n_stops = rng.randint(2, max_stops)
    stops = {}
    for i in range(n_stops):
        stop_id = f"S{i:03d}"
        stops[stop_id] = Stop(
            stop_id, f"stop {i}", GeoPoint(rng.uniform(lat0, lat1), rng.uniform(lon0, lon1))
        )
    stop_ids = list(stops)

    n_routes = rng.randint(1, 8)
    routes = {}
    for i in range(n_routes):
        route_id = f"R{i:02d}"
        code = rng.choice([0, 0, 3, 3, 1, 2, 7])
        routes[route_id] = Route(route_id, str(i), RouteType.from_code(code), code)
    route_ids = list(routes)

    n_trips = rng.randint(1, max_trips)
    trips = {}
    for i in range(n_trips):
        trip_id = f"T{i:03d}"
        length = rng.randint(2, 8)
        # sample with replacement occasionally so loop services occur
        if rng.random() < 0.15:
            visit = [rng.choice(stop_ids) for _ in range(length)]
        else:
            visit = rng.sample(stop_ids, min(length, len(stop_ids)))
            if len(visit) < 2:
                visit = visit * 2
        t = rng.randrange(5 * 3600, 22 * 3600, 60)
        sts = []
        for seq, stop_id in enumerate(visit, start=1):
            dwell = rng.choice([0, 0, 20, 40])
            sts.append(StopTime(stop_id, t, t + dwell, seq))
            t += dwell + rng.randrange(30, 600, 30)
        trips[trip_id] = TripSchedule(trip_id, rng.choice(route_ids), "WD", tuple(sts))

    calendar = ServiceCalendar(
        base={"WD": ((True,) * 7, date(2025, 1, 1), date(2025, 12, 31))}
    )
    return GtfsFeed(stops, routes, trips, calendar)


def pair_service_oracle(feed: GtfsFeed, stop_a, stop_b, day, window):
    """Brute force over every trip and every ordered (i < j) stop-time pair."""
    t0, t1 = window
    found = []
    for trip in feed.trips.values():
        if not feed.calendar.is_active(trip.service_id, day):
            continue
        sts = trip.stop_times
        for i in range(len(sts)):
            for j in range(i + 1, len(sts)):
                if (
                    sts[i].stop_id == stop_a
                    and sts[j].stop_id == stop_b
                    and t0 <= sts[i].departure < t1
                ):
                    found.append(
                        PairService(trip.trip_id, trip.route_id, sts[i].departure, sts[j].arrival)
                    )
    return sorted(found, key=lambda p: (p.dep_a, p.trip_id, p.arr_b))


# ---------------------------------------------------------------------------
# trace builders

BASE_TS = datetime(2025, 3, 3, 8, 0, 0, tzinfo=timezone.utc)

# metres of northward travel per degree of latitude
M_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0


def pt(offset_s, lat, lon, kind=ActivityKind.ON_FOOT, accuracy=5.0, confidence=1.0,
       base=None, speed=None):
    return TracePoint(
        timestamp=(base or BASE_TS) + timedelta(seconds=offset_s),
        location=GeoPoint(lat, lon),
        accuracy_m=accuracy,
        activity=ActivityLabel(kind=kind, confidence=confidence),
        client_speed_mps=speed,
    )


def straight_walk(kind, speed_mps, n_points, step_s=1.0, lat0=52.37, lon0=9.73,
                  start_offset_s=0.0, base=None, accuracy=5.0):
    """Points heading due north at constant speed; consecutive spacing is
    exactly speed*step_s metres because displacement is purely latitudinal."""
    dlat_per_step = speed_mps * step_s / M_PER_DEG_LAT
    return [
        pt(
            start_offset_s + i * step_s,
            lat0 + i * dlat_per_step,
            lon0,
            kind=kind,
            base=base,
            accuracy=accuracy,
        )
        for i in range(n_points)
    ]


# ---------------------------------------------------------------------------
# transit matching: ride synthesis and an independent brute-force matcher

def _lerp(a: GeoPoint, b: GeoPoint, u: float) -> GeoPoint:
    return GeoPoint(a.lat + (b.lat - a.lat) * u, a.lon + (b.lon - a.lon) * u)


def ride_points(feed: GtfsFeed, trip_id, i, j, n=12, jitter_s=0.0,
                east_offset_m=0.0, day=SERVICE_DAY):
    """Trace points riding scheduled trip `trip_id` from its i-th to j-th
    stop visit: positions interpolate the stop polyline leg by leg on the
    scheduled times, so an unjittered ride lies exactly on the shape."""
    trip = feed.trips[trip_id]
    sts = trip.stop_times[i : j + 1]
    locs = [feed.stops[st.stop_id].location for st in sts]
    t_start, t_end = sts[0].departure, sts[-1].arrival

    def position(t):
        if t <= sts[0].departure:
            return locs[0]
        for k in range(len(sts) - 1):
            if t <= sts[k + 1].arrival:
                if t < sts[k].departure:
                    return locs[k]  # dwelling
                leg = sts[k + 1].arrival - sts[k].departure
                u = 1.0 if leg <= 0 else (t - sts[k].departure) / leg
                return _lerp(locs[k], locs[k + 1], u)
            if k + 1 < len(sts) - 1 and t < sts[k + 1].departure:
                return locs[k + 1]
        return locs[-1]

    midnight = datetime(day.year, day.month, day.day, tzinfo=timezone.utc)
    points = []
    for m in range(n):
        t = t_start + (t_end - t_start) * m / (n - 1)
        loc = position(t)
        if east_offset_m:
            lon_scale = M_PER_DEG_LAT * math.cos(math.radians(loc.lat))
            loc = GeoPoint(loc.lat, loc.lon + east_offset_m / lon_scale)
        points.append(
            TracePoint(
                timestamp=midnight + timedelta(seconds=t + jitter_s),
                location=loc,
                accuracy_m=5.0,
                activity=ActivityLabel(ActivityKind.IN_VEHICLE),
            )
        )
    return points


def segment_of(points, trip_id="seg-trip", kind=ActivityKind.IN_VEHICLE):
    return Segment(trip_id=trip_id, start_index=0, points=tuple(points),
                   dominant_kind=kind)


def brute_force_candidates(segment, feed: GtfsFeed, config):
    """Every acceptable (entry, exit, trip visit) triple, enumerated without
    the spatial index or the pair-query helper."""
    first = segment.points[0].location
    last = segment.points[-1].location
    day = segment.started_at.date()
    midnight = datetime(day.year, day.month, day.day, tzinfo=timezone.utc)
    obs_start = (segment.started_at - midnight).total_seconds()
    obs_end = obs_start + segment.duration_s

    entries = [s.stop_id for s in feed.stops.values()
               if haversine_distance(first, s.location) <= config.entry_radius_m]
    exits = [s.stop_id for s in feed.stops.values()
             if haversine_distance(last, s.location) <= config.entry_radius_m]

    out = []
    for trip in feed.trips.values():
        if not feed.calendar.is_active(trip.service_id, day):
            continue
        shape = feed.shape_for_trip(trip.trip_id)
        spatial = None
        if shape is not None:
            spatial = sum(
                point_to_polyline_distance(p.location, shape) for p in segment.points
            ) / len(segment.points)
        sts = trip.stop_times
        for a in range(len(sts)):
            for b in range(a + 1, len(sts)):
                if sts[a].stop_id not in entries or sts[b].stop_id not in exits:
                    continue
                if sts[a].stop_id == sts[b].stop_id:
                    continue
                if abs(sts[a].departure - obs_start) > config.temporal_tolerance_s:
                    continue
                if spatial is None or spatial > config.spatial_accept_m:
                    continue
                out.append(
                    MatchCandidate(
                        trip_id=trip.trip_id,
                        route_id=trip.route_id,
                        entry_stop_id=sts[a].stop_id,
                        exit_stop_id=sts[b].stop_id,
                        dep_a=sts[a].departure,
                        arr_b=sts[b].arrival,
                        spatial_score=spatial,
                        temporal_score=(abs(obs_start - sts[a].departure)
                                        + abs(obs_end - sts[b].arrival)) / 2.0,
                    )
                )
    return out


def brute_force_match(segment, feed, config):
    candidates = brute_force_candidates(segment, feed, config)
    if not candidates:
        return None
    return min(candidates, key=candidate_sort_key)


def random_invehicle_segment(rng: random.Random, feed: GtfsFeed,
                             box=(52.0, 52.5, 9.0, 9.5)):
    """Either a ride along a random scheduled trip (jittered in time and
    shifted in space) or an unrelated random walk; both exercise the matcher."""
    if rng.random() < 0.6 and feed.trips:
        trip = feed.trips[rng.choice(list(feed.trips))]
        n_visits = len(trip.stop_times)
        i = rng.randrange(0, n_visits - 1)
        j = rng.randrange(i + 1, n_visits)
        points = ride_points(
            feed, trip.trip_id, i, j,
            n=rng.randint(5, 20),
            jitter_s=rng.uniform(-450, 450),
            east_offset_m=rng.uniform(0, 160),
        )
    else:
        lat0, lat1, lon0, lon1 = box
        lat = rng.uniform(lat0, lat1)
        lon = rng.uniform(lon0, lon1)
        t = rng.uniform(6 * 3600, 21 * 3600)
        points = []
        for k in range(rng.randint(2, 20)):
            points.append(
                TracePoint(
                    timestamp=datetime(
                        SERVICE_DAY.year, SERVICE_DAY.month, SERVICE_DAY.day,
                        tzinfo=timezone.utc,
                    ) + timedelta(seconds=t),
                    location=GeoPoint(lat, lon),
                    accuracy_m=5.0,
                    activity=ActivityLabel(ActivityKind.IN_VEHICLE),
                )
            )
            t += rng.uniform(1, 30)
            lat += rng.uniform(-1e-4, 1e-4)
            lon += rng.uniform(-1e-4, 1e-4)
    return segment_of(points)
