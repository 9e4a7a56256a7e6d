"""GTFS timetable loading, validation and the queries needed for transit matching.

Only the CSV core is consumed: stops, routes, trips, stop_times, plus the
service calendar and optional shapes. Times are seconds since service midnight
and may exceed 24:00:00 for post-midnight service, per the GTFS convention.
All time windows are half-open [t0, t1).
"""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, field
from datetime import date

from .geo import GeoPoint, Polyline, SpatialIndex


class GtfsError(Exception):
    """Base class for feed loading and query failures."""


class MissingFile(GtfsError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"required feed file missing: {path}")


class ParseError(GtfsError):
    def __init__(self, file: str, line: int, message: str):
        self.file = file
        self.line = line
        super().__init__(f"{file}:{line}: {message}")


class DanglingReference(GtfsError):
    def __init__(self, kind: str, ref_id: str):
        self.kind = kind
        self.ref_id = ref_id
        super().__init__(f"dangling {kind} reference: {ref_id!r}")


class UnknownStop(GtfsError):
    def __init__(self, stop_id: str):
        self.stop_id = stop_id
        super().__init__(f"unknown stop: {stop_id!r}")


class RouteType(enum.Enum):
    TRAM = 0
    SUBWAY = 1
    RAIL = 2
    BUS = 3
    OTHER = -1

    @classmethod
    def from_code(cls, code: int) -> "RouteType":
        try:
            return cls(code)
        except ValueError:
            return cls.OTHER


@dataclass(frozen=True)
class Stop:
    stop_id: str
    name: str
    location: GeoPoint


@dataclass(frozen=True)
class Route:
    route_id: str
    short_name: str
    route_type: RouteType
    route_type_code: int  # raw GTFS code, kept for faithful re-serialization


@dataclass(frozen=True)
class StopTime:
    stop_id: str
    arrival: int  # seconds since service midnight, may exceed 86400
    departure: int
    stop_sequence: int

    def __post_init__(self):
        if self.departure < self.arrival:
            raise ValueError(
                f"departure {self.departure} before arrival {self.arrival} at {self.stop_id}"
            )
        if self.stop_sequence <= 0:
            raise ValueError(f"stop_sequence must be positive, got {self.stop_sequence}")


@dataclass(frozen=True)
class TripSchedule:
    trip_id: str
    route_id: str
    service_id: str
    stop_times: tuple[StopTime, ...]
    shape_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "stop_times", tuple(self.stop_times))
        seqs = [st.stop_sequence for st in self.stop_times]
        if any(b <= a for a, b in zip(seqs, seqs[1:])):
            raise ValueError(f"trip {self.trip_id}: stop_sequence not strictly increasing")
        for a, b in zip(self.stop_times, self.stop_times[1:]):
            if b.arrival < a.departure:
                raise ValueError(f"trip {self.trip_id}: times decrease along the trip")


@dataclass
class ServiceCalendar:
    """Weekly service patterns plus dated add/remove exceptions.

    When no calendar file was provided at all, every service is treated as
    active every day; handy for toy feeds.
    """

    base: dict[str, tuple[tuple[bool, ...], date, date]] = field(default_factory=dict)
    exceptions: dict[tuple[str, date], bool] = field(default_factory=dict)
    permissive: bool = False

    def is_active(self, service_id: str, day: date) -> bool:
        override = self.exceptions.get((service_id, day))
        if override is not None:
            return override
        row = self.base.get(service_id)
        if row is None:
            return self.permissive
        weekdays, start, end = row
        return start <= day <= end and weekdays[day.weekday()]


@dataclass(frozen=True)
class PairService:
    """One scheduled trip serving an ordered stop pair."""

    trip_id: str
    route_id: str
    dep_a: int
    arr_b: int


class GtfsFeed:
    """Immutable timetable universe with a spatial index over its stops."""

    def __init__(
        self,
        stops: dict[str, Stop],
        routes: dict[str, Route],
        trips: dict[str, TripSchedule],
        calendar: ServiceCalendar,
        shapes: dict[str, Polyline] | None = None,
    ):
        self.stops = stops
        self.routes = routes
        self.trips = trips
        self.calendar = calendar
        self.shapes = shapes or {}
        self._validate()
        self.stop_index = SpatialIndex([(s.stop_id, s.location) for s in stops.values()])
        self._trip_shapes: dict[str, Polyline | None] = {}

    def _validate(self):
        for trip in self.trips.values():
            if trip.route_id not in self.routes:
                raise DanglingReference("route", trip.route_id)
            for st in trip.stop_times:
                if st.stop_id not in self.stops:
                    raise DanglingReference("stop", st.stop_id)

    def counts(self) -> dict[str, int]:
        return {
            "stops": len(self.stops),
            "routes": len(self.routes),
            "trips": len(self.trips),
            "stop_times": sum(len(t.stop_times) for t in self.trips.values()),
        }

    def shape_for_trip(self, trip_id: str) -> Polyline | None:
        """Geometry a vehicle on this trip follows.

        Uses the trip's shape when the feed provides one, otherwise the
        polyline through its stops in sequence. None when no usable geometry
        exists (e.g. all stops co-located).
        """
        if trip_id in self._trip_shapes:
            return self._trip_shapes[trip_id]
        trip = self.trips[trip_id]
        shape = None
        if trip.shape_id and trip.shape_id in self.shapes:
            shape = self.shapes[trip.shape_id]
        else:
            points: list[GeoPoint] = []
            for st in trip.stop_times:
                loc = self.stops[st.stop_id].location
                if not points or points[-1] != loc:
                    points.append(loc)
            if len(points) >= 2:
                shape = Polyline(tuple(points))
        self._trip_shapes[trip_id] = shape
        return shape

    def departures_at_stop(
        self, stop_id: str, day: date, window: tuple[float, float]
    ) -> list[tuple[str, int]]:
        """(trip_id, departure) pairs at the stop within [t0, t1) on the date."""
        if stop_id not in self.stops:
            raise UnknownStop(stop_id)
        t0, t1 = window
        if t0 > t1:
            raise ValueError(f"window start {t0} after end {t1}")
        out = []
        for trip in self.trips.values():
            if not self.calendar.is_active(trip.service_id, day):
                continue
            for st in trip.stop_times:
                if st.stop_id == stop_id and t0 <= st.departure < t1:
                    out.append((trip.trip_id, st.departure))
        out.sort(key=lambda item: (item[1], item[0]))
        return out

    def trips_serving_pair(
        self, stop_a: str, stop_b: str, day: date, window: tuple[float, float]
    ) -> list[PairService]:
        """Trips visiting stop_a strictly before stop_b with dep_a in [t0, t1).

        A trip that visits the pair more than once (loop service) yields one
        entry per qualifying visit pair.
        """
        for stop_id in (stop_a, stop_b):
            if stop_id not in self.stops:
                raise UnknownStop(stop_id)
        t0, t1 = window
        if t0 > t1:
            raise ValueError(f"window start {t0} after end {t1}")
        out = []
        for trip in self.trips.values():
            if not self.calendar.is_active(trip.service_id, day):
                continue
            sts = trip.stop_times
            for i, st_a in enumerate(sts):
                if st_a.stop_id != stop_a or not (t0 <= st_a.departure < t1):
                    continue
                for st_b in sts[i + 1:]:
                    if st_b.stop_id == stop_b:
                        out.append(
                            PairService(trip.trip_id, trip.route_id, st_a.departure, st_b.arrival)
                        )
        out.sort(key=lambda p: (p.dep_a, p.trip_id, p.arr_b))
        return out


def parse_gtfs_time(text: str) -> int:
    """HH:MM:SS with HH allowed past 24 for post-midnight service."""
    parts = text.strip().split(":")
    if len(parts) != 3:
        raise ValueError(f"bad time {text!r}")
    h, m, s = (int(p) for p in parts)
    if h < 0 or not 0 <= m < 60 or not 0 <= s < 60:
        raise ValueError(f"bad time {text!r}")
    return h * 3600 + m * 60 + s


def format_gtfs_time(seconds: int) -> str:
    h, rem = divmod(int(seconds), 3600)
    m, s = divmod(rem, 60)
    return f"{h:02d}:{m:02d}:{s:02d}"


def _read_rows(path: str, required: tuple[str, ...]):
    """Yield (line_number, row) for a header-driven CSV file."""
    filename = os.path.basename(path)
    with open(path, encoding="utf-8-sig", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ParseError(filename, 1, "empty file")
        missing = [col for col in required if col not in reader.fieldnames]
        if missing:
            raise ParseError(filename, 1, f"missing columns: {', '.join(missing)}")
        for row in reader:
            yield reader.line_num, row


def _field(row: dict, key: str, filename: str, line: int) -> str:
    value = row.get(key)
    if value is None or value.strip() == "":
        raise ParseError(filename, line, f"empty field {key!r}")
    return value.strip()


def load_gtfs(directory: str) -> GtfsFeed:
    """Load and validate a feed from a directory of GTFS CSV files.

    stops.txt, routes.txt, trips.txt and stop_times.txt are required;
    calendar.txt, calendar_dates.txt and shapes.txt are optional. Any
    structural problem (missing file, bad value, dangling reference) is fatal
    and reported with its location.
    """
    for name in ("stops.txt", "routes.txt", "trips.txt", "stop_times.txt"):
        if not os.path.isfile(os.path.join(directory, name)):
            raise MissingFile(os.path.join(directory, name))

    stops: dict[str, Stop] = {}
    for line, row in _read_rows(
        os.path.join(directory, "stops.txt"), ("stop_id", "stop_name", "stop_lat", "stop_lon")
    ):
        stop_id = _field(row, "stop_id", "stops.txt", line)
        if stop_id in stops:
            raise ParseError("stops.txt", line, f"duplicate stop_id {stop_id!r}")
        try:
            location = GeoPoint(float(row["stop_lat"]), float(row["stop_lon"]))
        except ValueError as exc:
            raise ParseError("stops.txt", line, str(exc)) from exc
        stops[stop_id] = Stop(stop_id, row.get("stop_name", "").strip(), location)

    routes: dict[str, Route] = {}
    for line, row in _read_rows(
        os.path.join(directory, "routes.txt"), ("route_id", "route_short_name", "route_type")
    ):
        route_id = _field(row, "route_id", "routes.txt", line)
        if route_id in routes:
            raise ParseError("routes.txt", line, f"duplicate route_id {route_id!r}")
        try:
            code = int(row["route_type"])
        except ValueError as exc:
            raise ParseError("routes.txt", line, f"bad route_type {row['route_type']!r}") from exc
        routes[route_id] = Route(
            route_id, row.get("route_short_name", "").strip(), RouteType.from_code(code), code
        )

    trip_meta: dict[str, tuple[str, str, str | None, int]] = {}
    for line, row in _read_rows(
        os.path.join(directory, "trips.txt"), ("route_id", "service_id", "trip_id")
    ):
        trip_id = _field(row, "trip_id", "trips.txt", line)
        if trip_id in trip_meta:
            raise ParseError("trips.txt", line, f"duplicate trip_id {trip_id!r}")
        shape_id = (row.get("shape_id") or "").strip() or None
        trip_meta[trip_id] = (
            _field(row, "route_id", "trips.txt", line),
            _field(row, "service_id", "trips.txt", line),
            shape_id,
            line,
        )

    stop_times: dict[str, list[StopTime]] = {trip_id: [] for trip_id in trip_meta}
    for line, row in _read_rows(
        os.path.join(directory, "stop_times.txt"),
        ("trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"),
    ):
        trip_id = _field(row, "trip_id", "stop_times.txt", line)
        if trip_id not in trip_meta:
            raise DanglingReference("trip", trip_id)
        stop_id = _field(row, "stop_id", "stop_times.txt", line)
        if stop_id not in stops:
            raise DanglingReference("stop", stop_id)
        try:
            st = StopTime(
                stop_id=stop_id,
                arrival=parse_gtfs_time(row["arrival_time"]),
                departure=parse_gtfs_time(row["departure_time"]),
                stop_sequence=int(row["stop_sequence"]),
            )
        except ValueError as exc:
            raise ParseError("stop_times.txt", line, str(exc)) from exc
        stop_times[trip_id].append(st)

    trips: dict[str, TripSchedule] = {}
    for trip_id, (route_id, service_id, shape_id, line) in trip_meta.items():
        sts = sorted(stop_times[trip_id], key=lambda st: st.stop_sequence)
        if len(sts) < 2:
            raise ParseError("trips.txt", line, f"trip {trip_id!r} has fewer than 2 stop times")
        try:
            trips[trip_id] = TripSchedule(trip_id, route_id, service_id, tuple(sts), shape_id)
        except ValueError as exc:
            raise ParseError("stop_times.txt", line, str(exc)) from exc

    calendar = _load_calendar(directory)
    shapes = _load_shapes(directory)
    return GtfsFeed(stops, routes, trips, calendar, shapes)


_WEEKDAY_COLS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")


def _load_calendar(directory: str) -> ServiceCalendar:
    calendar = ServiceCalendar()
    cal_path = os.path.join(directory, "calendar.txt")
    if os.path.isfile(cal_path):
        for line, row in _read_rows(cal_path, ("service_id",) + _WEEKDAY_COLS + ("start_date", "end_date")):
            service_id = _field(row, "service_id", "calendar.txt", line)
            try:
                flags = tuple(row[col].strip() == "1" for col in _WEEKDAY_COLS)
                start = _parse_gtfs_date(row["start_date"])
                end = _parse_gtfs_date(row["end_date"])
            except ValueError as exc:
                raise ParseError("calendar.txt", line, str(exc)) from exc
            calendar.base[service_id] = (flags, start, end)
    else:
        calendar.permissive = True

    dates_path = os.path.join(directory, "calendar_dates.txt")
    if os.path.isfile(dates_path):
        for line, row in _read_rows(dates_path, ("service_id", "date", "exception_type")):
            service_id = _field(row, "service_id", "calendar_dates.txt", line)
            try:
                day = _parse_gtfs_date(row["date"])
                kind = int(row["exception_type"])
            except ValueError as exc:
                raise ParseError("calendar_dates.txt", line, str(exc)) from exc
            if kind not in (1, 2):
                raise ParseError("calendar_dates.txt", line, f"bad exception_type {kind}")
            calendar.exceptions[(service_id, day)] = kind == 1
    return calendar


def _parse_gtfs_date(text: str) -> date:
    text = text.strip()
    if len(text) != 8 or not text.isdigit():
        raise ValueError(f"bad date {text!r}, expected YYYYMMDD")
    return date(int(text[:4]), int(text[4:6]), int(text[6:8]))


def _load_shapes(directory: str) -> dict[str, Polyline]:
    path = os.path.join(directory, "shapes.txt")
    if not os.path.isfile(path):
        return {}
    raw: dict[str, list[tuple[int, GeoPoint]]] = {}
    for line, row in _read_rows(path, ("shape_id", "shape_pt_lat", "shape_pt_lon", "shape_pt_sequence")):
        shape_id = _field(row, "shape_id", "shapes.txt", line)
        try:
            point = GeoPoint(float(row["shape_pt_lat"]), float(row["shape_pt_lon"]))
            seq = int(row["shape_pt_sequence"])
        except ValueError as exc:
            raise ParseError("shapes.txt", line, str(exc)) from exc
        raw.setdefault(shape_id, []).append((seq, point))
    shapes = {}
    for shape_id, entries in raw.items():
        entries.sort(key=lambda e: e[0])
        points: list[GeoPoint] = []
        for _, point in entries:
            if not points or points[-1] != point:
                points.append(point)
        if len(points) >= 2:
            shapes[shape_id] = Polyline(tuple(points))
    return shapes


def write_gtfs(feed: GtfsFeed, directory: str):
    """Serialize a feed back to GTFS CSV files (inverse of load_gtfs)."""
    os.makedirs(directory, exist_ok=True)

    def _write(name: str, header: list[str], rows: list[list]):
        with open(os.path.join(directory, name), "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            writer.writerows(rows)

    _write(
        "stops.txt",
        ["stop_id", "stop_name", "stop_lat", "stop_lon"],
        [[s.stop_id, s.name, repr(s.location.lat), repr(s.location.lon)] for s in feed.stops.values()],
    )
    _write(
        "routes.txt",
        ["route_id", "route_short_name", "route_type"],
        [[r.route_id, r.short_name, r.route_type_code] for r in feed.routes.values()],
    )
    _write(
        "trips.txt",
        ["route_id", "service_id", "trip_id", "shape_id"],
        [[t.route_id, t.service_id, t.trip_id, t.shape_id or ""] for t in feed.trips.values()],
    )
    _write(
        "stop_times.txt",
        ["trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"],
        [
            [t.trip_id, format_gtfs_time(st.arrival), format_gtfs_time(st.departure), st.stop_id, st.stop_sequence]
            for t in feed.trips.values()
            for st in t.stop_times
        ],
    )
    if not feed.calendar.permissive:
        _write(
            "calendar.txt",
            ["service_id", *_WEEKDAY_COLS, "start_date", "end_date"],
            [
                [sid, *("1" if f else "0" for f in flags), start.strftime("%Y%m%d"), end.strftime("%Y%m%d")]
                for sid, (flags, start, end) in feed.calendar.base.items()
            ],
        )
    if feed.calendar.exceptions:
        _write(
            "calendar_dates.txt",
            ["service_id", "date", "exception_type"],
            [
                [sid, day.strftime("%Y%m%d"), 1 if added else 2]
                for (sid, day), added in feed.calendar.exceptions.items()
            ],
        )
    if feed.shapes:
        _write(
            "shapes.txt",
            ["shape_id", "shape_pt_lat", "shape_pt_lon", "shape_pt_sequence"],
            [
                [shape_id, repr(pt.lat), repr(pt.lon), seq]
                for shape_id, line in feed.shapes.items()
                for seq, pt in enumerate(line.points, start=1)
            ],
        )
