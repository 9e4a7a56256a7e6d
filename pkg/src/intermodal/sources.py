"""Parsers for the auxiliary data sources next to the GPS traces.

Four formats arrive from outside: floating-car traffic speeds (CSV), journey
planner query logs (CSV), traffic notifications (RSS 2.0) and street segment
geometry (GeoJSON). CSV inputs are multi-month machine extracts, so a bad row
is reported with its line number instead of killing the batch; only files
broken at the structural level raise. Each parser has a serializer inverse so
records round-trip.
"""

from __future__ import annotations

import csv
import email.utils
import enum
import io
import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime

from .geo import GeoPoint, Polyline
from .timeutil import format_instant, parse_instant

log = logging.getLogger(__name__)

GEORSS_NS = "http://www.georss.org/georss"


class SourceError(Exception):
    """Structural problem that makes a whole input unusable."""


class HeaderMismatch(SourceError):
    pass


class MalformedCsv(SourceError):
    pass


class MalformedXml(SourceError):
    pass


class MalformedGeoJson(SourceError):
    pass


class MissingSegmentId(SourceError):
    pass


class NonLineStringGeometry(SourceError):
    pass


class DuplicateSegmentId(SourceError):
    pass


@dataclass(frozen=True)
class RowError:
    """One rejected CSV row. Codes: BadRow, BadInstant, Misaligned,
    BadNumber, NegativeSpeed, BadEndpoint, SameEndpoints."""

    line: int
    code: str
    message: str


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class FcdRecord:
    segment_id: str
    interval_start: datetime
    avg_speed_kmh: float

    def __post_init__(self):
        if not self.segment_id:
            raise ValueError("empty segment_id")
        if self.interval_start.tzinfo is None:
            raise ValueError("interval_start must be timezone-aware")
        if (
            self.interval_start.minute % 15
            or self.interval_start.second
            or self.interval_start.microsecond
        ):
            raise ValueError(f"not 15-minute aligned: {self.interval_start}")
        if not (math.isfinite(self.avg_speed_kmh) and self.avg_speed_kmh >= 0):
            raise ValueError(f"bad speed: {self.avg_speed_kmh}")


@dataclass(frozen=True)
class PtQuery:
    origin: str | GeoPoint
    destination: str | GeoPoint
    departure: datetime
    issued_at: datetime

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError("origin equals destination")


class NotificationCategory(enum.Enum):
    WARNING = "Warning"
    ACCIDENT = "Accident"
    OTHER = "Other"


@dataclass(frozen=True)
class TrafficNotification:
    id: str
    title: str
    description: str
    published_at: datetime
    location: GeoPoint | None = None
    category: NotificationCategory = NotificationCategory.OTHER


@dataclass(frozen=True)
class StreetSegment:
    segment_id: str
    geometry: Polyline
    name: str | None = None
    road_class: str | None = None

    def __post_init__(self):
        if not self.segment_id:
            raise ValueError("empty segment_id")


# ---------------------------------------------------------------------------
# CSV plumbing


def _as_text(stream) -> str:
    if isinstance(stream, str):
        return stream
    data = stream.read()
    if isinstance(data, bytes):
        return data.decode("utf-8", errors="replace")
    return data


def _csv_rows(text: str, expected_header: list[str]):
    """Yield (line_number, row) after validating the header row."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader, None)
    except csv.Error as exc:
        raise MalformedCsv(str(exc)) from exc
    if header is None:
        raise HeaderMismatch(f"empty input, expected header {expected_header}")
    cleaned = [cell.strip().lstrip("﻿") for cell in header]
    if cleaned != expected_header:
        raise HeaderMismatch(f"expected header {expected_header}, got {cleaned}")
    while True:
        try:
            row = next(reader, None)
        except csv.Error as exc:
            raise MalformedCsv(f"line {reader.line_num}: {exc}") from exc
        if row is None:
            return
        if row:  # skip blank lines, as csv does for []
            yield reader.line_num, row


def parse_fcd_csv(stream) -> tuple[list[FcdRecord], list[RowError]]:
    """Floating-car data: average speed per street segment and 15-minute
    interval. Rows with misaligned timestamps or negative speeds are
    reported, not fatal."""
    records, errors = [], []
    for line, row in _csv_rows(_as_text(stream), ["segment_id", "interval_start", "avg_speed_kmh"]):
        if len(row) != 3 or not row[0].strip():
            errors.append(RowError(line, "BadRow", f"expected 3 fields, got {len(row)}"))
            continue
        segment_id, raw_instant, raw_speed = (cell.strip() for cell in row)
        try:
            instant = parse_instant(raw_instant)
        except ValueError as exc:
            errors.append(RowError(line, "BadInstant", str(exc)))
            continue
        if instant.minute % 15 or instant.second or instant.microsecond:
            errors.append(RowError(line, "Misaligned", f"{raw_instant} not on a 15-minute boundary"))
            continue
        try:
            speed = float(raw_speed)
        except ValueError:
            errors.append(RowError(line, "BadNumber", f"bad speed {raw_speed!r}"))
            continue
        if not math.isfinite(speed):
            errors.append(RowError(line, "BadNumber", f"non-finite speed {raw_speed!r}"))
            continue
        if speed < 0:
            errors.append(RowError(line, "NegativeSpeed", f"speed {speed} below zero"))
            continue
        records.append(FcdRecord(segment_id, instant, speed))
    return records, errors


def serialize_fcd_csv(records: list[FcdRecord]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["segment_id", "interval_start", "avg_speed_kmh"])
    for r in records:
        writer.writerow([r.segment_id, format_instant(r.interval_start), repr(r.avg_speed_kmh)])
    return out.getvalue()


def _parse_endpoint(raw: str) -> str | GeoPoint:
    """A stop id, or a "lat;lon" coordinate pair."""
    if ";" in raw:
        parts = raw.split(";")
        if len(parts) != 2:
            raise ValueError(f"bad coordinate pair {raw!r}")
        return GeoPoint(float(parts[0]), float(parts[1]))
    if not raw:
        raise ValueError("empty endpoint")
    return raw


def _format_endpoint(endpoint: str | GeoPoint) -> str:
    if isinstance(endpoint, GeoPoint):
        return f"{endpoint.lat!r};{endpoint.lon!r}"
    return endpoint


def parse_query_log_csv(stream) -> tuple[list[PtQuery], list[RowError]]:
    """Journey planner query log: origin, destination, wanted departure and
    the time the query was issued."""
    queries, errors = [], []
    for line, row in _csv_rows(_as_text(stream), ["origin", "destination", "departure", "issued_at"]):
        if len(row) != 4:
            errors.append(RowError(line, "BadRow", f"expected 4 fields, got {len(row)}"))
            continue
        raw_origin, raw_destination, raw_departure, raw_issued = (c.strip() for c in row)
        try:
            origin = _parse_endpoint(raw_origin)
            destination = _parse_endpoint(raw_destination)
        except ValueError as exc:
            errors.append(RowError(line, "BadEndpoint", str(exc)))
            continue
        if origin == destination:
            errors.append(RowError(line, "SameEndpoints", f"origin equals destination: {raw_origin!r}"))
            continue
        try:
            departure = parse_instant(raw_departure)
            issued_at = parse_instant(raw_issued)
        except ValueError as exc:
            errors.append(RowError(line, "BadInstant", str(exc)))
            continue
        queries.append(PtQuery(origin, destination, departure, issued_at))
    return queries, errors


def serialize_query_log_csv(queries: list[PtQuery]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["origin", "destination", "departure", "issued_at"])
    for q in queries:
        writer.writerow([
            _format_endpoint(q.origin),
            _format_endpoint(q.destination),
            format_instant(q.departure),
            format_instant(q.issued_at),
        ])
    return out.getvalue()


# ---------------------------------------------------------------------------
# RSS traffic notifications


def _categorize(title: str) -> NotificationCategory:
    lowered = title.lower()
    if "unfall" in lowered or "accident" in lowered:
        return NotificationCategory.ACCIDENT
    if "warnung" in lowered or "warning" in lowered:
        return NotificationCategory.WARNING
    return NotificationCategory.OTHER


def _parse_pubdate(raw: str) -> datetime:
    try:
        parsed = email.utils.parsedate_to_datetime(raw)
    except (ValueError, TypeError):
        parsed = None
    if parsed is not None:
        if parsed.tzinfo is None:
            raise ValueError(f"pubDate without timezone: {raw!r}")
        return parsed
    return parse_instant(raw)


def parse_traffic_feed(xml_stream) -> list[TrafficNotification]:
    """RSS 2.0 traffic feed: one notification per item. The category comes
    from a keyword scan of the title. Items without a usable pubDate are
    skipped with a warning; broken XML is fatal."""
    text = _as_text(xml_stream)
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc

    notifications = []
    for index, item in enumerate(root.iter("item")):
        title = (item.findtext("title") or "").strip()
        raw_date = item.findtext("pubDate")
        if raw_date is None:
            log.warning("feed item %d (%r) has no pubDate, skipped", index, title)
            continue
        try:
            published_at = _parse_pubdate(raw_date.strip())
        except ValueError:
            log.warning("feed item %d (%r) has unparseable pubDate %r, skipped",
                        index, title, raw_date)
            continue
        location = None
        raw_point = item.findtext(f"{{{GEORSS_NS}}}point")
        if raw_point:
            parts = raw_point.split()
            if len(parts) == 2:
                try:
                    location = GeoPoint(float(parts[0]), float(parts[1]))
                except ValueError:
                    location = None
        notifications.append(
            TrafficNotification(
                id=(item.findtext("guid") or item.findtext("link") or f"item-{index}").strip(),
                title=title,
                description=(item.findtext("description") or "").strip(),
                published_at=published_at,
                location=location,
                category=_categorize(title),
            )
        )
    return notifications


def serialize_traffic_feed(notifications: list[TrafficNotification],
                           channel_title: str = "traffic") -> str:
    rss = ET.Element("rss", version="2.0")
    channel = ET.SubElement(rss, "channel")
    ET.SubElement(channel, "title").text = channel_title
    for n in notifications:
        item = ET.SubElement(channel, "item")
        ET.SubElement(item, "title").text = n.title
        ET.SubElement(item, "description").text = n.description
        ET.SubElement(item, "guid").text = n.id
        ET.SubElement(item, "pubDate").text = email.utils.format_datetime(n.published_at)
        if n.location is not None:
            point = ET.SubElement(item, f"{{{GEORSS_NS}}}point")
            point.text = f"{n.location.lat!r} {n.location.lon!r}"
    return ET.tostring(rss, encoding="unicode")


# ---------------------------------------------------------------------------
# street segments (GeoJSON)


def load_street_segments(geojson_stream) -> list[StreetSegment]:
    """FeatureCollection of LineString features carrying a segment_id
    property. GeoJSON positions are (lon, lat) and are flipped into
    GeoPoint(lat, lon) here."""
    text = _as_text(geojson_stream)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedGeoJson(str(exc)) from exc
    if not isinstance(data, dict) or data.get("type") != "FeatureCollection":
        raise MalformedGeoJson("expected a FeatureCollection")
    features = data.get("features")
    if not isinstance(features, list):
        raise MalformedGeoJson("features must be a list")

    segments = []
    seen = set()
    for index, feature in enumerate(features):
        if not isinstance(feature, dict):
            raise MalformedGeoJson(f"feature {index} is not an object")
        geometry = feature.get("geometry")
        if not isinstance(geometry, dict) or geometry.get("type") != "LineString":
            raise NonLineStringGeometry(f"feature {index}")
        properties = feature.get("properties")
        if not isinstance(properties, dict):
            properties = {}
        segment_id = properties.get("segment_id")
        if not isinstance(segment_id, str) or not segment_id:
            raise MissingSegmentId(f"feature {index}")
        if segment_id in seen:
            raise DuplicateSegmentId(segment_id)
        seen.add(segment_id)
        coordinates = geometry.get("coordinates")
        if not isinstance(coordinates, list):
            raise MalformedGeoJson(f"feature {index}: coordinates must be a list")
        points = []
        for position in coordinates:
            if not isinstance(position, (list, tuple)) or len(position) < 2:
                raise MalformedGeoJson(f"feature {index}: bad position {position!r}")
            lon, lat = position[0], position[1]
            if not isinstance(lon, (int, float)) or not isinstance(lat, (int, float)):
                raise MalformedGeoJson(f"feature {index}: non-numeric position")
            try:
                points.append(GeoPoint(float(lat), float(lon)))
            except ValueError as exc:
                raise MalformedGeoJson(f"feature {index}: {exc}") from exc
        try:
            polyline = Polyline(tuple(points))
        except ValueError as exc:
            raise MalformedGeoJson(f"feature {index}: {exc}") from exc
        name = properties.get("name")
        road_class = properties.get("road_class")
        segments.append(
            StreetSegment(
                segment_id=segment_id,
                geometry=polyline,
                name=name if isinstance(name, str) else None,
                road_class=road_class if isinstance(road_class, str) else None,
            )
        )
    return segments


def dump_street_segments(segments: list[StreetSegment]) -> str:
    features = []
    for s in segments:
        properties = {"segment_id": s.segment_id}
        if s.name is not None:
            properties["name"] = s.name
        if s.road_class is not None:
            properties["road_class"] = s.road_class
        features.append({
            "type": "Feature",
            "properties": properties,
            "geometry": {
                "type": "LineString",
                "coordinates": [[p.lon, p.lat] for p in s.geometry.points],
            },
        })
    return json.dumps({"type": "FeatureCollection", "features": features})


# ---------------------------------------------------------------------------
# alignment


@dataclass(frozen=True)
class AlignmentResult:
    joined: tuple[tuple[FcdRecord, StreetSegment], ...]
    unmatched_ids: frozenset[str]


def align_fcd_to_segments(records: list[FcdRecord],
                          segments: list[StreetSegment]) -> AlignmentResult:
    """Join speed records onto street geometry by segment_id. Every record
    lands in joined or contributes its id to unmatched_ids."""
    by_id = {s.segment_id: s for s in segments}
    joined = []
    unmatched = set()
    for record in records:
        segment = by_id.get(record.segment_id)
        if segment is None:
            unmatched.add(record.segment_id)
        else:
            joined.append((record, segment))
    return AlignmentResult(joined=tuple(joined), unmatched_ids=frozenset(unmatched))


# ---------------------------------------------------------------------------
# store record codecs (JSON-friendly dicts for persistence)


def fcd_to_record(record: FcdRecord) -> dict:
    return {
        "segment_id": record.segment_id,
        "interval_start": format_instant(record.interval_start),
        "avg_speed_kmh": record.avg_speed_kmh,
    }


def fcd_from_record(record: dict) -> FcdRecord:
    return FcdRecord(
        record["segment_id"],
        parse_instant(record["interval_start"]),
        record["avg_speed_kmh"],
    )


def _endpoint_to_record(endpoint):
    if isinstance(endpoint, GeoPoint):
        return {"lat": endpoint.lat, "lon": endpoint.lon}
    return endpoint


def _endpoint_from_record(value):
    if isinstance(value, dict):
        return GeoPoint(value["lat"], value["lon"])
    return value


def query_to_record(query: PtQuery) -> dict:
    return {
        "origin": _endpoint_to_record(query.origin),
        "destination": _endpoint_to_record(query.destination),
        "departure": format_instant(query.departure),
        "issued_at": format_instant(query.issued_at),
    }


def query_from_record(record: dict) -> PtQuery:
    return PtQuery(
        origin=_endpoint_from_record(record["origin"]),
        destination=_endpoint_from_record(record["destination"]),
        departure=parse_instant(record["departure"]),
        issued_at=parse_instant(record["issued_at"]),
    )


def notification_to_record(n: TrafficNotification) -> dict:
    record = {
        "id": n.id,
        "title": n.title,
        "description": n.description,
        "published_at": format_instant(n.published_at),
        "category": n.category.value,
    }
    if n.location is not None:
        record["location"] = {"lat": n.location.lat, "lon": n.location.lon}
    return record


def notification_from_record(record: dict) -> TrafficNotification:
    location = record.get("location")
    return TrafficNotification(
        id=record["id"],
        title=record["title"],
        description=record["description"],
        published_at=parse_instant(record["published_at"]),
        location=GeoPoint(location["lat"], location["lon"]) if location else None,
        category=NotificationCategory(record["category"]),
    )


def street_to_record(segment: StreetSegment) -> dict:
    record = {
        "segment_id": segment.segment_id,
        "coordinates": [[p.lon, p.lat] for p in segment.geometry.points],
    }
    if segment.name is not None:
        record["name"] = segment.name
    if segment.road_class is not None:
        record["road_class"] = segment.road_class
    return record


def street_from_record(record: dict) -> StreetSegment:
    return StreetSegment(
        segment_id=record["segment_id"],
        geometry=Polyline(
            tuple(GeoPoint(lat, lon) for lon, lat in record["coordinates"])
        ),
        name=record.get("name"),
        road_class=record.get("road_class"),
    )
